// Temporary empirical probe; superseded by the acceptance suite.
use lztime::attack::{dictionary_attack, AttackConfig, AttackLayouts, LocalCodecTarget, Statistic};
use lztime::codec::{self, CodecId, CompressionLevel};
use lztime::fuzzer::{self, EvolutionParams, FitnessTarget, Polarity};
use lztime::layout::{FillerKind, LayoutBounds, LayoutConfig};
use lztime::timing::{characterize, characterize_compression, default_clock, Aggregator, MeasurementPlan};
use lztime::AcceptancePolicy;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

#[test]
#[ignore]
fn probe_orderings() {
    let plan = MeasurementPlan::new(10_000, Aggregator::Min).unwrap();
    for codec_id in CodecId::ALL {
        let level = codec_id.default_level();
        let rows = characterize(codec_id, level, &plan, 1234).unwrap();
        print!("{codec_id} decomp: ");
        for r in &rows {
            match &r.stats {
                Some(s) => print!("{}=[min {} med {} mean {:.0}] ", r.kind, s.min_ns, s.median_ns, s.mean_ns),
                None => print!("{}=absent ", r.kind),
            }
        }
        println!();
    }
    let plan_c = MeasurementPlan::new(2_000, Aggregator::Min).unwrap().with_warmup(200);
    for codec_id in CodecId::ALL {
        let level = codec_id.default_level();
        let rows = characterize_compression(codec_id, level, &plan_c, 1234).unwrap();
        print!("{codec_id} comp:   ");
        for r in &rows {
            match &r.stats {
                Some(s) => print!("{}=[min {} med {}] ", r.kind, s.min_ns, s.median_ns),
                None => print!("{}=absent ", r.kind),
            }
        }
        println!();
    }
}

fn manual_layout() -> LayoutConfig {
    LayoutConfig {
        seed: 0,
        total_size: 4096,
        secret_offset: 1024,
        guess_offset: 1536,
        guess_repetitions: 1,
        guess_stride: 6,
        compression_level: CompressionLevel::for_codec(CodecId::Deflate, 6).unwrap(),
        entropy_modulus: 17,
        prepend_compressible_len: 0,
        prefix: Vec::new(),
        filler: FillerKind::Cycle { period: 17 },
    }
}

fn shares_trigram(a: &[u8], b: &[u8]) -> bool {
    a.windows(3).any(|w| b.windows(3).any(|v| v == w))
}

fn anagram_guesses(secret: &[u8], n: usize, rng: &mut impl Rng) -> Vec<Vec<u8>> {
    let mut guesses: Vec<Vec<u8>> = vec![secret.to_vec()];
    let mut attempts = 0;
    while guesses.len() < n && attempts < 10_000 {
        attempts += 1;
        let mut g: Vec<u8> = secret.to_vec();
        g.shuffle(rng);
        if !guesses.contains(&g) && !shares_trigram(&g, secret) {
            guesses.push(g);
        }
    }
    guesses
}

#[test]
#[ignore]
fn probe_manual_attack() {
    lztime::timing::pin_to_core(0);
    let secret = b"SECRET";
    for (name, secret_off, guess_off) in [("guess-after", 1024usize, 1536usize), ("guess-before", 1536, 1024)] {
        for level in [1u32, 6] {
            let mut layout = manual_layout();
            layout.secret_offset = secret_off;
            layout.guess_offset = guess_off;
            layout.compression_level =
                CompressionLevel::for_codec(CodecId::Deflate, level).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let mut ranks = [0usize; 9];
            let runs = 15;
            for _ in 0..runs {
                let mut guesses = anagram_guesses(secret, 8, &mut rng);
                guesses.shuffle(&mut rng);
                let mut target = LocalCodecTarget::new(
                    FitnessTarget::raw(CodecId::Deflate),
                    secret.to_vec(),
                    default_clock(),
                );
                let mut config = AttackConfig::new(
                    Polarity::CorrectFastest,
                    AttackLayouts::Single(layout.clone()),
                );
                config.fixed_reps = 4000;
                config.reps_max = 4000;
                config.statistic = Statistic::Min;
                let t = dictionary_attack(&mut target, &guesses, &config, &mut rng).unwrap();
                // rank of the true secret among per-guess min stats
                let correct_stat = t
                    .per_guess
                    .iter()
                    .find(|g| g.label.as_bytes() == secret)
                    .unwrap()
                    .stats
                    .min_ns;
                let rank = 1 + t
                    .per_guess
                    .iter()
                    .filter(|g| g.stats.min_ns < correct_stat)
                    .count();
                ranks[rank] += 1;
            }
            println!("{name} level {level}: rank histogram {:?}", &ranks[1..]);
        }
    }
}

#[test]
#[ignore]
fn probe_deflate_fuzz() {
    let secret = b"SECRET";
    let prefix = b"cookie=";
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut guesses: Vec<Vec<u8>> = vec![secret.to_vec()];
    while guesses.len() < 8 {
        let g: Vec<u8> = (0..6).map(|_| rng.gen_range(b'A'..=b'Z')).collect();
        if !guesses.contains(&g) {
            guesses.push(g);
        }
    }
    let bounds = LayoutBounds::new(CodecId::Deflate, prefix.to_vec(), secret.len())
        .with_total_size(1024..=32768)
        .with_prepend_max(4096);
    let target = FitnessTarget::raw(CodecId::Deflate);
    let params = EvolutionParams {
        epochs: 8,
        population: 60,
        fitness_iterations: 60,
        ..EvolutionParams::desk_scale(Polarity::CorrectFastest)
    };
    let t0 = std::time::Instant::now();
    let out = fuzzer::evolve(
        &params,
        &bounds,
        |cfg| fuzzer::evaluate_fitness(cfg, &target, secret, &guesses, params.fitness_iterations, default_clock()),
        &mut rng,
        None,
    )
    .unwrap();
    println!("deflate fuzz took {:?}", t0.elapsed());
    for e in &out.epochs {
        println!("epoch {} best {} validity {:.2}", e.epoch, e.best_gap_ns, e.validity_rate);
    }
    println!("best config: {:?}", out.best.config);
    println!("best fitness: {} ns", out.best.fitness_ns);
}

fn is_boundary_layout(
    cfg: &LayoutConfig,
    target: &FitnessTarget,
    secret: &[u8],
    guesses: &[Vec<u8>],
) -> bool {
    let mut correct_compressed = false;
    let mut all_incorrect_raw = true;
    for g in guesses {
        let data = fuzzer::build_guess_buffer(cfg, target, secret, g).unwrap();
        let blob = codec::store_with_policy(
            &AcceptancePolicy::pglz(),
            CodecId::Pglz,
            cfg.compression_level,
            &data,
        )
        .unwrap();
        let correct = secret.starts_with(g);
        if correct {
            correct_compressed = !blob.stored_raw;
        } else if !blob.stored_raw {
            all_incorrect_raw = false;
        }
    }
    correct_compressed && all_incorrect_raw
}

#[test]
#[ignore]
fn probe_pglz_boundary_fuzz() {
    let secret = b"SECRET";
    let prefix = b"cookie=";
    let mut guesses: Vec<Vec<u8>> = vec![b"S".to_vec()];
    for c in [b'A', b'B', b'C', b'D', b'E', b'F', b'G'] {
        if c != b'S' {
            guesses.push(vec![c]);
        }
    }
    let bounds = LayoutBounds::shift_window(CodecId::Pglz, prefix.to_vec(), secret.len())
        .with_total_size(1024..=3072)
        .with_entropy_modulus(32..=256)
        .with_pinned_secret_offset(0)
        .with_repetitions(1..=4)
        .with_prepend_max(2048);
    let target = FitnessTarget {
        codec: CodecId::Pglz,
        policy: Some(AcceptancePolicy::pglz()),
        colocated: true,
        shift_window: true,
    };
    let params = EvolutionParams {
        epochs: 20,
        population: 100,
        fitness_iterations: 30,
        ..EvolutionParams::desk_scale(Polarity::CorrectSlowest)
    };
    let mut hits = 0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t0 = std::time::Instant::now();
        let out = fuzzer::evolve(
            &params,
            &bounds,
            |cfg| {
                fuzzer::evaluate_fitness(
                    cfg,
                    &target,
                    secret,
                    &guesses,
                    params.fitness_iterations,
                    default_clock(),
                )
            },
            &mut rng,
            None,
        )
        .unwrap();
        let boundary = out.best.valid && is_boundary_layout(&out.best.config, &target, secret, &guesses);
        if boundary {
            hits += 1;
        }
        println!(
            "seed {seed}: took {:?} best_fitness={} valid={} boundary={}",
            t0.elapsed(),
            out.best.fitness_ns,
            out.best.valid,
            boundary
        );
        if boundary {
            println!("  config: total={} mod={} prepend={} reps={} seed={}",
                out.best.config.total_size, out.best.config.entropy_modulus,
                out.best.config.prepend_compressible_len, out.best.config.guess_repetitions,
                out.best.config.seed);
        }
    }
    println!("boundary hits: {hits}/5");
}

#[test]
#[ignore]
fn probe_kv_e2e() {
    use lztime::attack::{bytewise_attack, GuessCharset, RemoteKvTarget};
    use lztime::service::{serve_victim, ServiceConfig};

    lztime::timing::pin_to_core(0);
    let secret = b"SECRET".to_vec();
    let prefix = b"cookie=".to_vec();

    // fuzz a colocated, policy-aware deflate layout
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut guesses: Vec<Vec<u8>> = vec![secret.clone()];
    while guesses.len() < 8 {
        let g: Vec<u8> = (0..6).map(|_| rng.gen_range(b'A'..=b'Z')).collect();
        if !guesses.contains(&g) {
            guesses.push(g);
        }
    }
    let bounds = LayoutBounds::new(CodecId::Deflate, prefix.clone(), secret.len())
        .with_total_size(2048..=16384)
        .with_pinned_secret_offset(0)
        .with_prepend_max(8192);
    let target = FitnessTarget {
        codec: CodecId::Deflate,
        policy: Some(AcceptancePolicy::memcached()),
        colocated: true,
        shift_window: false,
    };
    let params = EvolutionParams {
        epochs: 10,
        population: 80,
        fitness_iterations: 50,
        ..EvolutionParams::desk_scale(Polarity::Either)
    };
    let t0 = std::time::Instant::now();
    let out = fuzzer::evolve(
        &params,
        &bounds,
        |cfg| fuzzer::evaluate_fitness(cfg, &target, &secret, &guesses, params.fitness_iterations, default_clock()),
        &mut rng,
        None,
    )
    .unwrap();
    println!(
        "deflate colocated fuzz took {:?}, best gap {} ns polarity {:?} total_size {}",
        t0.elapsed(),
        out.best.fitness_ns,
        out.best.polarity_observed,
        out.best.config.total_size,
    );

    // serve and attack over loopback
    let server = serve_victim(
        ServiceConfig::kv_memcached(secret.clone(), prefix.clone()),
        "127.0.0.1:0",
    )
    .unwrap();
    let polarity = match out.best.polarity_observed {
        Some(lztime::fuzzer::ObservedPolarity::Fastest) => Polarity::CorrectFastest,
        _ => Polarity::CorrectSlowest,
    };

    // dictionary with 100 guesses
    let mut dict: Vec<Vec<u8>> = vec![secret.clone()];
    while dict.len() < 100 {
        let g: Vec<u8> = (0..6)
            .map(|_| {
                let c = rng.gen_range(0..36);
                if c < 26 { b'A' + c } else { b'0' + (c - 26) }
            })
            .collect();
        if !dict.contains(&g) {
            dict.push(g);
        }
    }
    let mut wins = 0;
    let trials = 5;
    let t1 = std::time::Instant::now();
    for t in 0..trials {
        let mut target = RemoteKvTarget::connect(&server.addr().to_string()).unwrap();
        let mut config = AttackConfig::new(polarity, AttackLayouts::Single(out.best.config.clone()));
        config.statistic = Statistic::Min;
        config.fixed_reps = 30;
        let tr = dictionary_attack(&mut target, &dict, &config, &mut rng).unwrap();
        let ok = tr.recovered == secret;
        if ok { wins += 1; }
        println!("dict trial {t}: {} gap={} requests={}", if ok {"WIN"} else {"LOSS"}, tr.decisions[0].gap_ns, tr.requests_used);
    }
    println!("dict: {wins}/{trials} in {:?}", t1.elapsed());

    // bytewise: per-position mini-fuzz (polarity-consistent), then attack
    // both the training secret and a fresh one to check content transfer
    fn cell_fitness() -> FitnessTarget {
        FitnessTarget {
            codec: CodecId::Deflate,
            policy: Some(AcceptancePolicy::memcached()),
            colocated: true,
            shift_window: false,
        }
    }
    let t2 = std::time::Instant::now();
    let mut position_layouts = Vec::new();
    let mut target_polarity = None;
    for pos in 0..secret.len() {
        let mut pg: Vec<Vec<u8>> = Vec::new();
        let correct: Vec<u8> = secret[..pos + 1].to_vec();
        pg.push(correct.clone());
        while pg.len() < 8 {
            let mut g = secret[..pos].to_vec();
            let c = rng.gen_range(b'A'..=b'Z');
            g.push(c);
            if !pg.contains(&g) {
                pg.push(g);
            }
        }
        let params_pos = EvolutionParams {
            epochs: 10,
            population: 60,
            fitness_iterations: 60,
            ..EvolutionParams::desk_scale(Polarity::Either)
        };
        let outp = fuzzer::evolve(
            &params_pos,
            &bounds,
            |cfg| fuzzer::evaluate_fitness(cfg, &cell_fitness(), &secret, &pg, params_pos.fitness_iterations, default_clock()),
            &mut rng,
            None,
        )
        .unwrap();
        // pick the best candidate matching the campaign polarity
        let want = *target_polarity.get_or_insert(outp.best.polarity_observed.unwrap());
        let chosen = outp
            .ranked
            .iter()
            .find(|c| c.valid && c.polarity_observed == Some(want))
            .unwrap_or(&outp.best)
            .clone();
        println!(
            "pos {pos}: gap {} polarity {:?}",
            chosen.fitness_ns, chosen.polarity_observed
        );
        position_layouts.push(chosen.config.clone());
    }
    println!("position fuzzes took {:?}", t2.elapsed());
    let polarity_bw = match target_polarity.unwrap() {
        lztime::fuzzer::ObservedPolarity::Fastest => Polarity::CorrectFastest,
        lztime::fuzzer::ObservedPolarity::Slowest => Polarity::CorrectSlowest,
    };

    for (label, victim_secret) in [("train-secret", secret.clone()), ("fresh-secret", b"XK4Q7Z".to_vec())] {
        let server2 = serve_victim(
            ServiceConfig::kv_memcached(victim_secret.clone(), prefix.clone()),
            "127.0.0.1:0",
        )
        .unwrap();
        let mut target = RemoteKvTarget::connect(&server2.addr().to_string()).unwrap();
        let mut config = AttackConfig::new(
            polarity_bw,
            AttackLayouts::PerPosition(position_layouts.clone()),
        );
        config.statistic = Statistic::Min;
        config.fixed_reps = 40;
        let t3 = std::time::Instant::now();
        let tr = bytewise_attack(
            &mut target,
            &prefix,
            &GuessCharset::default(),
            victim_secret.len(),
            &config,
            &mut rng,
        )
        .unwrap();
        let ok = tr.recovered == victim_secret;
        println!(
            "bytewise {label}: {} recovered {:?} in {:?} requests={}",
            if ok { "WIN" } else { "LOSS" },
            String::from_utf8_lossy(&tr.recovered),
            t3.elapsed(),
            tr.requests_used
        );
        server2.shutdown();
    }
    server.shutdown();
}

#[test]
#[ignore]
fn probe_fuzz_hit_rate() {
    let secret = b"SECRET".to_vec();
    let prefix = b"cookie=".to_vec();
    let target = FitnessTarget {
        codec: CodecId::Deflate,
        policy: Some(AcceptancePolicy::memcached()),
        colocated: true,
        shift_window: false,
    };
    // corner-rich region: mid-entropy filler, many repetitions
    let bounds = LayoutBounds::new(CodecId::Deflate, prefix.clone(), secret.len())
        .with_total_size(4096..=16384)
        .with_entropy_modulus(16..=128)
        .with_repetitions(4..=64)
        .with_pinned_secret_offset(0)
        .with_prepend_max(8192);
    let params = EvolutionParams {
        epochs: 10,
        population: 70,
        fitness_iterations: 60,
        ..EvolutionParams::desk_scale(Polarity::Either)
    };
    for class in ["dict", "pos0"] {
        let mut strong = 0;
        for seed in 0..4u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let guesses: Vec<Vec<u8>> = if class == "dict" {
                let mut gs = vec![secret.clone()];
                while gs.len() < 8 {
                    let g: Vec<u8> = (0..6).map(|_| rng.gen_range(b'A'..=b'Z')).collect();
                    if !gs.contains(&g) { gs.push(g); }
                }
                gs
            } else {
                let mut gs = vec![vec![b'S']];
                for c in (b'A'..=b'Z').filter(|&c| c != b'S').take(7) {
                    gs.push(vec![c]);
                }
                gs
            };
            let t0 = std::time::Instant::now();
            let out = fuzzer::evolve(
                &params,
                &bounds,
                |cfg| fuzzer::evaluate_fitness(cfg, &target, &secret, &guesses, params.fitness_iterations, default_clock()),
                &mut rng,
                None,
            )
            .unwrap();
            // re-measure the best for an honest gap estimate
            let recheck = fuzzer::evaluate_fitness(&out.best.config, &target, &secret, &guesses, 200, default_clock()).unwrap();
            if recheck.gap_ns >= 30_000 { strong += 1; }
            println!(
                "{class} seed {seed}: fuzz gap {} recheck gap {} rank {} ({:?})",
                out.best.fitness_ns, recheck.gap_ns, recheck.correct_rank, t0.elapsed()
            );
        }
        println!("{class}: strong {strong}/4");
    }
}
