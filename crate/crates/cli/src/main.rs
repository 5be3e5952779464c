//! Command line front end: characterize codecs, evolve attack layouts, run
//! dictionary/bytewise attacks, drive covert channels, and host the mock
//! victim services and latency proxy.

mod manifest;

use clap::error::ErrorKind as ClapErrorKind;
use clap::{Args, Parser, Subcommand};
use lztime::attack::{self, AttackConfig, AttackLayouts, GuessCharset, RemoteKvTarget, Statistic};
use lztime::codec::{CodecId, CompressionLevel};
use lztime::covert::{self, BitClassifier, BitEncoding, ChannelMode, ChannelStats, WireBitChannel};
use lztime::fuzzer::{self, EvolutionParams, FitnessTarget, ObservedPolarity, Polarity};
use lztime::layout::{LayoutBounds, LayoutConfig};
use lztime::service::{self, ProxyConfig, ServiceConfig};
use lztime::timing::{self, Aggregator, MeasurementPlan};
use lztime::{AcceptancePolicy, Error};
use manifest::RunManifest;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

const ENDPOINT_ENV: &str = "LZTIME_ENDPOINT";

#[derive(Parser)]
#[command(
    name = "lztime",
    about = "Decompression-timing side channel toolkit",
    long_about = "Measures per-input decompression timing, evolves memory layouts that\n\
                  amplify correct-vs-incorrect guess timing gaps, and runs covert\n\
                  channels and secret-leaking attacks against the bundled mock\n\
                  victim services.\n\n\
                  CSV formats:\n\
                    characterize: codec,level,entropy_kind,n,min_ns,median_ns,mean_ns,stddev_pct\n\
                    transcript:   position,symbol,median_ns,chosen\n\
                    covert stats: bits,errors,elapsed_s,rate_bits_per_s"
)]
struct Cli {
    /// Output directory for artifacts (CSV, checkpoints, manifest).
    #[arg(long, default_value = "out", global = true)]
    out: PathBuf,
    /// Pin the process to this core before timing anything.
    #[arg(long, global = true)]
    pin_core: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Measure decompression timing for the three entropy classes.
    Characterize(CharacterizeArgs),
    /// Evolve a layout maximizing the correct-guess timing gap.
    Fuzz(FuzzArgs),
    /// Dictionary attack against a served victim.
    AttackDict(AttackDictArgs),
    /// Bytewise secret recovery against a served victim.
    AttackBytewise(AttackBytewiseArgs),
    /// Transmit bits through a compression-timing channel.
    CovertSend(CovertSendArgs),
    /// Receive bits from a compression-timing channel.
    CovertRecv(CovertRecvArgs),
    /// Host a mock victim service.
    Serve(ServeArgs),
    /// Host the latency-injection proxy.
    Proxy(ProxyArgs),
}

#[derive(Args, serde::Serialize)]
struct CharacterizeArgs {
    /// Codec: deflate, lz4, zstd or pglz.
    #[arg(long)]
    codec: String,
    /// Compression level (codec default when omitted).
    #[arg(long)]
    level: Option<u32>,
    /// Timed iterations per entropy class.
    #[arg(long, default_value_t = 10_000)]
    iters: usize,
    /// Warmup iterations before timing.
    #[arg(long, default_value_t = 1000)]
    warmup: usize,
    /// Seed for the entropy pages.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also measure the compression side.
    #[arg(long, default_value_t = false)]
    compression: bool,
}

#[derive(Args, serde::Serialize)]
struct FuzzArgs {
    #[arg(long)]
    codec: String,
    /// File holding the training secret bytes.
    #[arg(long)]
    secret_file: PathBuf,
    /// Known prefix embedded before secret and guesses.
    #[arg(long, default_value = "cookie=")]
    prefix: String,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 100)]
    population: usize,
    /// Timing iterations per guess inside the fitness helper.
    #[arg(long, default_value_t = 100)]
    fitness_iters: usize,
    /// Wrong guesses evaluated against the secret per candidate.
    #[arg(long, default_value_t = 7)]
    wrong_guesses: usize,
    /// correct-fastest, correct-slowest or either.
    #[arg(long, default_value = "either")]
    polarity: String,
    /// Storage policy applied before timing: none, memcached or pglz.
    #[arg(long, default_value = "none")]
    policy: String,
    /// Victim prepends prefix+secret to the attacker payload.
    #[arg(long, default_value_t = false)]
    colocated: bool,
    /// Fuzz fixed-width shift windows instead of padded full guesses.
    #[arg(long, default_value_t = false)]
    shift_window: bool,
    #[arg(long, default_value_t = 1024)]
    min_size: usize,
    #[arg(long, default_value_t = 65536)]
    max_size: usize,
    /// Smallest filler entropy modulus sampled.
    #[arg(long, default_value_t = 1)]
    min_modulus: u16,
    #[arg(long, default_value_t = 256)]
    max_modulus: u16,
    #[arg(long, default_value_t = 8192)]
    prepend_max: usize,
    #[arg(long, default_value_t = 64)]
    max_repetitions: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Resume from / checkpoint to this file (default under --out).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, serde::Serialize)]
struct TargetArgs {
    /// Victim endpoint host:port (env LZTIME_ENDPOINT overrides the default).
    #[arg(long, default_value = "127.0.0.1:7171")]
    target: String,
    /// Layout checkpoint file(s) from a fuzz run, repeatable.
    #[arg(long, required = true)]
    layout: Vec<PathBuf>,
    /// correct-fastest or correct-slowest; omit to use the checkpoint's.
    #[arg(long)]
    polarity: Option<String>,
    /// min or median per-guess statistic.
    #[arg(long, default_value = "min")]
    statistic: String,
    /// Samples per guess without calibrated regions.
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 25)]
    reps_min: usize,
    #[arg(long, default_value_t = 200)]
    reps_max: usize,
    #[arg(long, default_value_t = 7)]
    attack_seed: u64,
}

#[derive(Args, serde::Serialize)]
struct AttackDictArgs {
    #[command(flatten)]
    target: TargetArgs,
    /// File with one guess per line; the correct one must be among them.
    #[arg(long)]
    guesses_file: Option<PathBuf>,
    /// Top up with random guesses until this many exist.
    #[arg(long, default_value_t = 0)]
    random_guesses: usize,
    /// Guess length for generated guesses.
    #[arg(long, default_value_t = 6)]
    guess_len: usize,
}

#[derive(Args, serde::Serialize)]
struct AttackBytewiseArgs {
    #[command(flatten)]
    target: TargetArgs,
    /// Known plaintext prefix (at least 3 bytes).
    #[arg(long, default_value = "cookie=")]
    prefix: String,
    /// Number of secret bytes to recover.
    #[arg(long)]
    len: usize,
    /// Slide the prefix window one character per recovered byte.
    #[arg(long, default_value_t = false)]
    shift: bool,
}

#[derive(Args, serde::Serialize)]
struct CovertSendArgs {
    #[arg(long, default_value = "127.0.0.1:7171")]
    target: String,
    /// File whose bytes are transmitted.
    #[arg(long)]
    bits_file: Option<PathBuf>,
    /// Send this many random bytes instead of a file.
    #[arg(long)]
    random: Option<usize>,
    #[arg(long, default_value_t = 9)]
    seed: u64,
    /// value-per-bit or co-resident channel mode.
    #[arg(long, default_value = "value-per-bit")]
    mode: String,
    /// Page pair: local (no policy) or policy-safe for the cache flavor.
    #[arg(long, default_value = "policy-safe")]
    encoding: String,
    /// Prepend two known calibration bits (1 then 0).
    #[arg(long, default_value_t = true)]
    preamble: bool,
}

#[derive(Args, serde::Serialize)]
struct CovertRecvArgs {
    #[arg(long, default_value = "127.0.0.1:7171")]
    target: String,
    /// Bits to receive (excluding any preamble).
    #[arg(long)]
    n_bits: usize,
    /// Calibrate on bit indices 0/1 holding a known 1/0 preamble.
    #[arg(long, default_value_t = true)]
    calibrate: bool,
    /// Calibration fetches per known bit.
    #[arg(long, default_value_t = 100)]
    calibrate_reps: usize,
    /// Fetches per bit with a plain threshold (local mode).
    #[arg(long, default_value_t = 50)]
    reps: usize,
    /// Use early-stopping region classification instead of a threshold.
    #[arg(long, default_value_t = false)]
    early_stop: bool,
    #[arg(long, default_value_t = 25)]
    reps_min: usize,
    #[arg(long, default_value_t = 200)]
    reps_max: usize,
    #[arg(long, default_value = "value-per-bit")]
    mode: String,
    /// Write received bytes here.
    #[arg(long)]
    out_file: Option<PathBuf>,
}

#[derive(Args, serde::Serialize)]
struct ServeArgs {
    /// Listen endpoint host:port (env LZTIME_ENDPOINT overrides).
    #[arg(long, default_value = "127.0.0.1:7171")]
    endpoint: String,
    /// kv-memcached, cell-pglz or page-store.
    #[arg(long, default_value = "kv-memcached")]
    flavor: String,
    /// Codec override (flavor default when omitted).
    #[arg(long)]
    codec: Option<String>,
    #[arg(long)]
    level: Option<u32>,
    /// Secret colocated with client data.
    #[arg(long, default_value = "SECRET")]
    secret: String,
    #[arg(long, default_value = "cookie=")]
    secret_prefix: String,
    /// Disable colocation (store client bytes alone).
    #[arg(long, default_value_t = false)]
    no_colocate: bool,
}

#[derive(Args, serde::Serialize)]
struct ProxyArgs {
    /// Upstream service endpoint.
    #[arg(long)]
    upstream: String,
    /// Listen endpoint.
    #[arg(long, default_value = "127.0.0.1:7272")]
    listen: String,
    #[arg(long, default_value_t = 1.0)]
    base_delay_ms: f64,
    #[arg(long, default_value_t = 0.0)]
    jitter_stddev_ms: f64,
    #[arg(long, default_value_t = 14)]
    hops: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion => 0,
                _ => 64,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Some(core) = cli.pin_core {
        if !timing::pin_to_core(core) {
            eprintln!("warning: could not pin to core {core}");
        }
    }
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(if e.is_transport() { 2 } else { 1 });
        }
    }
}

fn endpoint_or_env(flag_value: &str) -> String {
    std::env::var(ENDPOINT_ENV).unwrap_or_else(|_| flag_value.to_string())
}

fn run(cli: Cli) -> lztime::Result<()> {
    std::fs::create_dir_all(&cli.out)?;
    let out = cli.out.clone();
    match cli.command {
        Command::Characterize(args) => characterize_cmd(&out, args),
        Command::Fuzz(args) => fuzz_cmd(&out, args),
        Command::AttackDict(args) => attack_dict_cmd(&out, args),
        Command::AttackBytewise(args) => attack_bytewise_cmd(&out, args),
        Command::CovertSend(args) => covert_send_cmd(&out, args),
        Command::CovertRecv(args) => covert_recv_cmd(&out, args),
        Command::Serve(args) => serve_cmd(&out, args),
        Command::Proxy(args) => proxy_cmd(&out, args),
    }
}

fn parse_polarity(s: &str) -> lztime::Result<Polarity> {
    match s {
        "correct-fastest" => Ok(Polarity::CorrectFastest),
        "correct-slowest" => Ok(Polarity::CorrectSlowest),
        "either" => Ok(Polarity::Either),
        other => Err(Error::config("polarity", format!("unknown polarity {other:?}"))),
    }
}

fn parse_statistic(s: &str) -> lztime::Result<Statistic> {
    match s {
        "min" => Ok(Statistic::Min),
        "median" => Ok(Statistic::Median),
        other => Err(Error::config("statistic", format!("unknown statistic {other:?}"))),
    }
}

fn parse_policy(s: &str) -> lztime::Result<Option<AcceptancePolicy>> {
    match s {
        "none" => Ok(None),
        "memcached" => Ok(Some(AcceptancePolicy::memcached())),
        "pglz" => Ok(Some(AcceptancePolicy::pglz())),
        other => Err(Error::config("policy", format!("unknown policy {other:?}"))),
    }
}

fn level_for(codec: CodecId, level: Option<u32>) -> lztime::Result<CompressionLevel> {
    match level {
        Some(l) => CompressionLevel::for_codec(codec, l),
        None => Ok(codec.default_level()),
    }
}

fn characterize_cmd(out: &Path, args: CharacterizeArgs) -> lztime::Result<()> {
    let codec: CodecId = args.codec.parse()?;
    let level = level_for(codec, args.level)?;
    let plan = MeasurementPlan::new(args.iters, Aggregator::Min)?.with_warmup(args.warmup);
    let rows = timing::characterize(codec, level, &plan, args.seed)?;
    let mut csv = format!("{}\n", timing::CSV_HEADER);
    csv.push_str(&timing::characterize_csv(codec, level, &rows));
    if args.compression {
        let rows = timing::characterize_compression(codec, level, &plan, args.seed)?;
        csv.push_str(&timing::characterize_csv(codec, level, &rows));
    }
    let path = out.join("characterize.csv");
    std::fs::write(&path, &csv)?;
    print!("{csv}");
    RunManifest::new("characterize", &args, vec![path])?.write(out)?;
    Ok(())
}

fn read_secret(path: &Path) -> lztime::Result<Vec<u8>> {
    let mut bytes = std::fs::read(path)?;
    while bytes.last().is_some_and(|b| *b == b'\n' || *b == b'\r') {
        bytes.pop();
    }
    if bytes.is_empty() {
        return Err(Error::config("secret_file", "secret is empty"));
    }
    Ok(bytes)
}

fn fuzz_cmd(out: &Path, args: FuzzArgs) -> lztime::Result<()> {
    let codec: CodecId = args.codec.parse()?;
    let secret = read_secret(&args.secret_file)?;
    let prefix = args.prefix.clone().into_bytes();
    let polarity = parse_polarity(&args.polarity)?;
    let policy = parse_policy(&args.policy)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);

    let mut guesses: Vec<Vec<u8>> = vec![if args.shift_window {
        secret[..1].to_vec()
    } else {
        secret.clone()
    }];
    let charset = GuessCharset::default();
    while guesses.len() < 1 + args.wrong_guesses {
        let len = guesses[0].len();
        let g: Vec<u8> = (0..len)
            .map(|_| *charset.symbols().choose(&mut rng).expect("non-empty"))
            .collect();
        if !guesses.contains(&g) && !secret.starts_with(&g) {
            guesses.push(g);
        }
    }

    let mut bounds = if args.shift_window {
        LayoutBounds::shift_window(codec, prefix, secret.len())
    } else {
        LayoutBounds::new(codec, prefix, secret.len())
    }
    .with_total_size(args.min_size..=args.max_size)
    .with_entropy_modulus(args.min_modulus..=args.max_modulus)
    .with_repetitions(1..=args.max_repetitions.max(1))
    .with_prepend_max(args.prepend_max);
    if args.colocated {
        bounds = bounds.with_pinned_secret_offset(0);
    }

    let target = FitnessTarget {
        codec,
        policy,
        colocated: args.colocated,
        shift_window: args.shift_window,
    };
    let params = EvolutionParams {
        epochs: args.epochs,
        population: args.population,
        fitness_iterations: args.fitness_iters,
        ..EvolutionParams::paper_scale(polarity)
    };
    let checkpoint = args
        .checkpoint
        .clone()
        .unwrap_or_else(|| out.join("checkpoint.toml"));
    let clock = timing::default_clock();
    let outcome = fuzzer::evolve(
        &params,
        &bounds,
        |cfg| {
            fuzzer::evaluate_fitness(cfg, &target, &secret, &guesses, params.fitness_iterations, clock)
        },
        &mut rng,
        Some(&checkpoint),
    )?;
    println!(
        "best gap_ns={} polarity={:?} valid={}",
        outcome.best.fitness_ns, outcome.best.polarity_observed, outcome.best.valid
    );
    println!("checkpoint: {}", checkpoint.display());
    RunManifest::new("fuzz", &args, vec![checkpoint])?.write(out)?;
    Ok(())
}

fn load_layouts(paths: &[PathBuf]) -> lztime::Result<(Vec<LayoutConfig>, Option<ObservedPolarity>)> {
    let mut layouts = Vec::new();
    let mut polarity = None;
    for p in paths {
        let ckpt = fuzzer::Checkpoint::load(p)?;
        polarity = polarity.or(ckpt.polarity_observed);
        layouts.push(ckpt.config);
    }
    Ok((layouts, polarity))
}

fn attack_config_from(target: &TargetArgs) -> lztime::Result<(AttackConfig, String)> {
    let (layouts, ckpt_polarity) = load_layouts(&target.layout)?;
    let polarity = match &target.polarity {
        Some(p) => parse_polarity(p)?,
        None => match ckpt_polarity {
            Some(ObservedPolarity::Fastest) => Polarity::CorrectFastest,
            Some(ObservedPolarity::Slowest) => Polarity::CorrectSlowest,
            None => {
                return Err(Error::config(
                    "polarity",
                    "checkpoint carries no polarity; pass --polarity",
                ))
            }
        },
    };
    let layouts = if layouts.len() == 1 {
        AttackLayouts::Single(layouts.into_iter().next().expect("one layout"))
    } else {
        AttackLayouts::PerPosition(layouts)
    };
    let mut config = AttackConfig::new(polarity, layouts);
    config.statistic = parse_statistic(&target.statistic)?;
    config.fixed_reps = target.reps;
    config.reps_min = target.reps_min;
    config.reps_max = target.reps_max.max(target.reps);
    let endpoint = endpoint_or_env(&target.target);
    Ok((config, endpoint))
}

fn attack_dict_cmd(out: &Path, args: AttackDictArgs) -> lztime::Result<()> {
    let (config, endpoint) = attack_config_from(&args.target)?;
    let mut guesses: Vec<Vec<u8>> = Vec::new();
    if let Some(path) = &args.guesses_file {
        let text = std::fs::read_to_string(path)?;
        guesses.extend(
            text.lines()
                .filter(|l| !l.is_empty())
                .map(|l| l.as_bytes().to_vec()),
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.target.attack_seed);
    let charset = GuessCharset::default();
    while guesses.len() < args.random_guesses {
        let g: Vec<u8> = (0..args.guess_len)
            .map(|_| *charset.symbols().choose(&mut rng).expect("non-empty"))
            .collect();
        if !guesses.contains(&g) {
            guesses.push(g);
        }
    }
    let mut target = RemoteKvTarget::connect(&endpoint)?;
    let transcript = attack::dictionary_attack(&mut target, &guesses, &config, &mut rng)?;
    finish_attack(out, "attack-dict", &args, transcript)
}

fn attack_bytewise_cmd(out: &Path, args: AttackBytewiseArgs) -> lztime::Result<()> {
    let (mut config, endpoint) = attack_config_from(&args.target)?;
    config.shift_mode = args.shift;
    let mut rng = ChaCha8Rng::seed_from_u64(args.target.attack_seed);
    let mut target = RemoteKvTarget::connect(&endpoint)?;
    let transcript = attack::bytewise_attack(
        &mut target,
        args.prefix.as_bytes(),
        &GuessCharset::default(),
        args.len,
        &config,
        &mut rng,
    )?;
    finish_attack(out, "attack-bytewise", &args, transcript)
}

fn finish_attack<A: serde::Serialize>(
    out: &Path,
    name: &str,
    args: &A,
    transcript: attack::AttackTranscript,
) -> lztime::Result<()> {
    println!("recovered: {}", String::from_utf8_lossy(&transcript.recovered));
    println!("requests:  {}", transcript.requests_used);
    let csv_path = out.join("transcript.csv");
    std::fs::write(
        &csv_path,
        format!(
            "{}\n{}",
            attack::AttackTranscript::CSV_HEADER,
            transcript.to_csv()
        ),
    )?;
    let txt_path = out.join("transcript.txt");
    std::fs::write(&txt_path, transcript.to_text())?;
    RunManifest::new(name, args, vec![csv_path, txt_path])?.write(out)?;
    Ok(())
}

fn parse_mode(s: &str) -> lztime::Result<ChannelMode> {
    match s {
        "value-per-bit" => Ok(ChannelMode::ValuePerBit),
        "co-resident" => Ok(ChannelMode::CoResidentPage),
        other => Err(Error::config("mode", format!("unknown channel mode {other:?}"))),
    }
}

fn covert_send_cmd(out: &Path, args: CovertSendArgs) -> lztime::Result<()> {
    let endpoint = endpoint_or_env(&args.target);
    let mode = parse_mode(&args.mode)?;
    let payload = match (&args.bits_file, args.random) {
        (Some(path), None) => std::fs::read(path)?,
        (None, Some(n)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            (0..n).map(|_| rng.gen()).collect()
        }
        _ => {
            return Err(Error::config(
                "bits_file",
                "pass exactly one of --bits-file or --random",
            ))
        }
    };
    let mut bits = Vec::new();
    if args.preamble {
        bits.push(true);
        bits.push(false);
    }
    bits.extend(covert::bytes_to_bits(&payload));
    let encoding = match args.encoding.as_str() {
        "local" => BitEncoding::local_default(args.seed),
        "policy-safe" => BitEncoding::policy_safe(
            &AcceptancePolicy::memcached(),
            CodecId::Deflate,
            CodecId::Deflate.default_level(),
            args.seed,
        )?,
        other => {
            return Err(Error::config(
                "encoding",
                format!("unknown encoding {other:?}"),
            ))
        }
    };
    let mut channel = WireBitChannel::connect(&endpoint, mode)?;
    let stats = covert::send_bits(&mut channel, &bits, &encoding)?;
    println!("{}", ChannelStats::CSV_HEADER);
    println!("{}", stats.csv_line());
    RunManifest::new("covert-send", &args, vec![])?.write(out)?;
    Ok(())
}

/// Receive-side view of a channel whose first bits carry a calibration
/// preamble.
struct OffsetChannel<'a> {
    inner: &'a mut WireBitChannel,
    offset: usize,
}

impl covert::BitChannel for OffsetChannel<'_> {
    fn sender_page_len(&self) -> usize {
        self.inner.sender_page_len()
    }

    fn send_bit(&mut self, index: usize, page: &[u8]) -> lztime::Result<()> {
        self.inner.send_bit(index + self.offset, page)
    }

    fn prepare_bit(&mut self, index: usize) -> lztime::Result<()> {
        self.inner.prepare_bit(index + self.offset)
    }

    fn probe_bit(&mut self, index: usize) -> lztime::Result<u64> {
        self.inner.probe_bit(index + self.offset)
    }
}

fn covert_recv_cmd(out: &Path, args: CovertRecvArgs) -> lztime::Result<()> {
    let endpoint = endpoint_or_env(&args.target);
    let mode = parse_mode(&args.mode)?;
    let mut channel = WireBitChannel::connect(&endpoint, mode)?;
    if !args.calibrate {
        return Err(Error::config("calibrate", "receiving requires calibration"));
    }
    let classifier = if args.early_stop {
        let regions =
            covert::calibrate_regions(&mut channel, 0, 1, args.calibrate_reps, Statistic::Min)?;
        BitClassifier::Regions {
            regions,
            reps_min: args.reps_min,
            reps_max: args.reps_max,
        }
    } else {
        let threshold = covert::calibrate_threshold(&mut channel, 0, 1, args.calibrate_reps)?;
        BitClassifier::Threshold {
            threshold_ns: threshold,
            reps: args.reps,
        }
    };
    let mut shifted = OffsetChannel {
        inner: &mut channel,
        offset: 2,
    };
    let (bits, stats) = covert::receive_bits(&mut shifted, args.n_bits, &classifier)?;
    println!("{}", ChannelStats::CSV_HEADER);
    println!("{}", stats.csv_line());
    let bytes = covert::bits_to_bytes(&bits);
    let mut artifacts = Vec::new();
    if let Some(path) = &args.out_file {
        std::fs::write(path, &bytes)?;
        artifacts.push(path.clone());
    } else {
        println!("received: {}", hex_string(&bytes));
    }
    RunManifest::new("covert-recv", &args, artifacts)?.write(out)?;
    Ok(())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn serve_cmd(out: &Path, args: ServeArgs) -> lztime::Result<()> {
    let endpoint = endpoint_or_env(&args.endpoint);
    let handle = match args.flavor.as_str() {
        "kv-memcached" | "cell-pglz" => {
            let mut config = if args.flavor == "kv-memcached" {
                ServiceConfig::kv_memcached(
                    args.secret.clone().into_bytes(),
                    args.secret_prefix.clone().into_bytes(),
                )
            } else {
                ServiceConfig::cell_pglz(
                    args.secret.clone().into_bytes(),
                    args.secret_prefix.clone().into_bytes(),
                )
            };
            if let Some(c) = &args.codec {
                config.codec = c.parse()?;
                config.level = config.codec.default_level();
            }
            if let Some(l) = args.level {
                config.level = CompressionLevel::for_codec(config.codec, l)?;
            }
            if args.no_colocate {
                config.colocate = false;
            }
            service::serve_victim(config, &endpoint)?
        }
        "page-store" => {
            let codec: CodecId = args.codec.as_deref().unwrap_or("deflate").parse()?;
            let level = level_for(codec, args.level)?;
            let store = covert::PageStore::new(codec, level);
            service::serve(std::sync::Arc::new(std::sync::Mutex::new(store)), &endpoint)?
        }
        other => {
            return Err(Error::config(
                "flavor",
                format!("unknown flavor {other:?}"),
            ))
        }
    };
    println!("serving {} on {}", args.flavor, handle.addr());
    RunManifest::new("serve", &args, vec![])?.write(out)?;
    loop {
        std::thread::sleep(std::time::Duration::from_secs(3600));
    }
}

fn proxy_cmd(out: &Path, args: ProxyArgs) -> lztime::Result<()> {
    let config = ProxyConfig {
        base_delay_ms: args.base_delay_ms,
        jitter_stddev_ms: args.jitter_stddev_ms,
        hops: args.hops,
        seed: args.seed,
    };
    let handle = service::proxy(config, &args.upstream, &args.listen)?;
    println!("proxying {} on {}", args.upstream, handle.addr());
    RunManifest::new("proxy", &args, vec![])?.write(out)?;
    loop {
        std::thread::sleep(std::time::Duration::from_secs(3600));
    }
}
