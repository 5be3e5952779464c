//! Evolutionary search over layout genomes maximizing the decompression
//! timing gap between the correct guess and the best incorrect one.
//!
//! Each generation scores the population, keeps the best fraction, refills
//! with mutants of the survivors plus fresh random genomes, and checkpoints
//! the best candidate seen so far. Candidates where the correct guess is
//! neither strictly fastest nor strictly slowest are discarded (score 0).

use crate::codec::{self, AcceptancePolicy, CodecId};
use crate::error::{Error, Result};
use crate::layout::{self, LayoutBounds, LayoutConfig};
use crate::timing::Clock;
use rand::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Which side of the timing distribution the correct guess must land on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    CorrectFastest,
    CorrectSlowest,
    Either,
}

/// Direction actually observed for one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservedPolarity {
    Fastest,
    Slowest,
}

/// Generation schedule and population composition.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvolutionParams {
    pub epochs: usize,
    pub population: usize,
    pub retention: f64,
    pub mutated_fraction: f64,
    pub random_fraction: f64,
    pub fitness_iterations: usize,
    pub polarity: Polarity,
}

impl EvolutionParams {
    /// Full-size run: 50 epochs over 1000 candidates, 5% retention, 70%
    /// mutants, 25% fresh random, 100 timing iterations per guess.
    pub fn paper_scale(polarity: Polarity) -> Self {
        EvolutionParams {
            epochs: 50,
            population: 1000,
            retention: 0.05,
            mutated_fraction: 0.70,
            random_fraction: 0.25,
            fitness_iterations: 100,
            polarity,
        }
    }

    /// Reduced run that finishes in minutes on a desktop.
    pub fn desk_scale(polarity: Polarity) -> Self {
        EvolutionParams {
            epochs: 20,
            population: 100,
            ..Self::paper_scale(polarity)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.population == 0 {
            return Err(Error::config("population", "must be at least 1"));
        }
        if self.fitness_iterations == 0 {
            return Err(Error::config("fitness_iterations", "must be at least 1"));
        }
        for (name, v) in [
            ("retention", self.retention),
            ("mutated_fraction", self.mutated_fraction),
            ("random_fraction", self.random_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config {
                    field: "fractions",
                    reason: format!("{name} = {v} outside [0, 1]"),
                });
            }
        }
        let total = self.retention + self.mutated_fraction + self.random_fraction;
        let tolerance = 1.0 / self.population as f64;
        if (total - 1.0).abs() > tolerance + 1e-9 {
            return Err(Error::config(
                "fractions",
                format!("retention + mutated + random = {total}, expected 1.0 within one candidate"),
            ));
        }
        Ok(())
    }
}

/// Per-guess minimum decompression times and the derived gap/rank for one
/// genome.
#[derive(Debug, Clone, PartialEq)]
pub struct FitnessReport {
    /// Minimum-aggregated time per guess, aligned with the guesses slice.
    /// Guesses whose stored form was rejected by the acceptance policy
    /// report 0.
    pub per_guess_min_ns: Vec<u64>,
    pub correct_index: usize,
    /// Distance between the correct guess's time and the nearest incorrect
    /// one.
    pub gap_ns: u64,
    /// 1-based rank of the correct guess when times are sorted ascending.
    pub correct_rank: usize,
}

impl FitnessReport {
    pub fn observed_polarity(&self) -> Option<ObservedPolarity> {
        let correct = self.per_guess_min_ns[self.correct_index];
        let others = self
            .per_guess_min_ns
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != self.correct_index)
            .map(|(_, &t)| t);
        let mut fastest = true;
        let mut slowest = true;
        for t in others {
            if t <= correct {
                fastest = false;
            }
            if t >= correct {
                slowest = false;
            }
        }
        match (fastest, slowest) {
            (true, false) => Some(ObservedPolarity::Fastest),
            (false, true) => Some(ObservedPolarity::Slowest),
            _ => None,
        }
    }
}

/// A genome with its measured fitness.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Candidate {
    pub config: LayoutConfig,
    pub fitness_ns: i64,
    pub polarity_observed: Option<ObservedPolarity>,
    pub valid: bool,
}

impl Candidate {
    pub fn from_report(
        config: LayoutConfig,
        report: &FitnessReport,
        polarity: Polarity,
    ) -> Candidate {
        let observed = report.observed_polarity();
        let valid = matches!(
            (polarity, observed),
            (Polarity::CorrectFastest, Some(ObservedPolarity::Fastest))
                | (Polarity::CorrectSlowest, Some(ObservedPolarity::Slowest))
                | (Polarity::Either, Some(_))
        );
        Candidate {
            config,
            fitness_ns: if valid { report.gap_ns as i64 } else { 0 },
            polarity_observed: observed,
            valid,
        }
    }

    pub fn invalid(config: LayoutConfig) -> Candidate {
        Candidate {
            config,
            fitness_ns: 0,
            polarity_observed: None,
            valid: false,
        }
    }
}

/// What the helper compresses and times for each guess.
#[derive(Debug, Clone)]
pub struct FitnessTarget {
    pub codec: CodecId,
    /// Storage acceptance applied before timing; rejected guesses report 0.
    pub policy: Option<AcceptancePolicy>,
    /// Victim prepends prefix+secret to the attacker payload instead of the
    /// secret sitting inside the page at `secret_offset`.
    pub colocated: bool,
    /// Guess spans are fixed-width shift windows instead of padded
    /// prefix+guess spans.
    pub shift_window: bool,
}

impl FitnessTarget {
    pub fn raw(codec: CodecId) -> Self {
        FitnessTarget {
            codec,
            policy: None,
            colocated: false,
            shift_window: false,
        }
    }
}

/// Build, compress and time every guess for one genome. Returns the
/// per-guess minimum times, the gap to the nearest incorrect guess, and the
/// correct guess's rank.
pub fn evaluate_fitness(
    config: &LayoutConfig,
    target: &FitnessTarget,
    secret: &[u8],
    guesses: &[Vec<u8>],
    fitness_iterations: usize,
    clock: &dyn Clock,
) -> Result<FitnessReport> {
    if guesses.len() < 2 {
        return Err(Error::contract("fitness needs at least two guesses"));
    }
    let correct: Vec<usize> = guesses
        .iter()
        .enumerate()
        .filter(|(_, g)| is_correct_guess(secret, g))
        .map(|(i, _)| i)
        .collect();
    if correct.len() != 1 {
        return Err(Error::contract(format!(
            "guesses must contain exactly one correct guess, found {}",
            correct.len()
        )));
    }
    let correct_index = correct[0];
    let mut blobs = Vec::with_capacity(guesses.len());
    for guess in guesses {
        let data = build_guess_buffer(config, target, secret, guess)?;
        let blob = match &target.policy {
            Some(policy) => {
                codec::store_with_policy(policy, target.codec, config.compression_level, &data)?
            }
            None => codec::compress(target.codec, config.compression_level, &data)?,
        };
        blobs.push(blob);
    }
    // Guesses are timed in interleaved rounds, not one guess at a time:
    // clock-floor drift over the measurement window then shifts every guess
    // equally instead of fabricating per-guess gaps.
    let mut per_guess_min_ns: Vec<u64> = vec![u64::MAX; guesses.len()];
    let mut scratch = Vec::new();
    {
        let _token = crate::timing::timing_token();
        for (i, blob) in blobs.iter().enumerate() {
            if blob.stored_raw {
                per_guess_min_ns[i] = 0;
                continue;
            }
            for _ in 0..fitness_iterations.min(8) {
                codec::decompress_into(blob, &mut scratch)?;
            }
        }
        for _ in 0..fitness_iterations {
            for (i, blob) in blobs.iter().enumerate() {
                if blob.stored_raw {
                    continue;
                }
                let t0 = clock.now_ns();
                codec::decompress_into(blob, &mut scratch)?;
                std::hint::black_box(scratch.as_slice());
                let t1 = clock.now_ns();
                per_guess_min_ns[i] = per_guess_min_ns[i].min(t1.saturating_sub(t0));
            }
        }
    }
    for v in per_guess_min_ns.iter_mut() {
        if *v == u64::MAX {
            *v = 0;
        }
    }
    let correct_time = per_guess_min_ns[correct_index];
    let mut gap = u64::MAX;
    let mut rank = 1usize;
    for (i, &t) in per_guess_min_ns.iter().enumerate() {
        if i == correct_index {
            continue;
        }
        gap = gap.min(correct_time.abs_diff(t));
        if t < correct_time {
            rank += 1;
        }
    }
    Ok(FitnessReport {
        per_guess_min_ns,
        correct_index,
        gap_ns: gap,
        correct_rank: rank,
    })
}

fn is_correct_guess(secret: &[u8], guess: &[u8]) -> bool {
    !guess.is_empty() && guess.len() <= secret.len() && secret[..guess.len()] == *guess
}

/// The full buffer the victim would compress for one guess.
pub fn build_guess_buffer(
    config: &LayoutConfig,
    target: &FitnessTarget,
    secret: &[u8],
    guess: &[u8],
) -> Result<Vec<u8>> {
    let guess_span = if target.shift_window {
        config.shift_window_bytes(guess)?
    } else {
        config.guess_span_bytes(guess, secret.len())?
    };
    if target.colocated {
        let payload = layout::build_attack_payload(config, &guess_span)?;
        let mut data = config.secret_span_bytes(secret);
        data.extend_from_slice(&payload.bytes);
        Ok(data)
    } else {
        let secret_span = config.secret_span_bytes(secret);
        Ok(layout::build_layout_raw(config, &secret_span, &guess_span)?.bytes)
    }
}

/// Timing-backed evaluator wiring [`evaluate_fitness`] to a fixed campaign.
pub struct CodecFitness<'a> {
    pub target: FitnessTarget,
    pub secret: &'a [u8],
    pub guesses: &'a [Vec<u8>],
    pub fitness_iterations: usize,
    pub clock: &'a dyn Clock,
}

impl CodecFitness<'_> {
    pub fn evaluate(&self, config: &LayoutConfig) -> Result<FitnessReport> {
        evaluate_fitness(
            config,
            &self.target,
            self.secret,
            self.guesses,
            self.fitness_iterations,
            self.clock,
        )
    }
}

/// Keep the top `retention` fraction of the population: invalid candidates
/// are excluded, ties break toward smaller total_size then smaller seed.
pub fn select_best(candidates: &[Candidate], retention: f64) -> Vec<Candidate> {
    let keep = ((retention * candidates.len() as f64).ceil() as usize).min(candidates.len());
    let mut valid: Vec<&Candidate> = candidates.iter().filter(|c| c.valid).collect();
    valid.sort_by(|a, b| {
        b.fitness_ns
            .cmp(&a.fitness_ns)
            .then(a.config.total_size.cmp(&b.config.total_size))
            .then(a.config.seed.cmp(&b.config.seed))
    });
    valid.into_iter().take(keep).cloned().collect()
}

/// Serialized best-candidate snapshot written once per epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub fitness_ns: i64,
    pub polarity_observed: Option<ObservedPolarity>,
    pub config: LayoutConfig,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::config("checkpoint", e.to_string()))?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::config("checkpoint", e.to_string()))
    }
}

/// One line of progress per generation.
#[derive(Debug, Clone, Copy)]
pub struct EpochSummary {
    pub epoch: usize,
    pub best_gap_ns: i64,
    pub validity_rate: f64,
}

/// Result of an evolution run: the final scored population ranked best
/// first, the best candidate ever seen, and the per-epoch log.
#[derive(Debug)]
pub struct EvolveOutcome {
    pub ranked: Vec<Candidate>,
    pub best: Candidate,
    pub epochs: Vec<EpochSummary>,
}

/// Run the evolutionary loop. `eval` scores one genome; an Err marks the
/// candidate invalid rather than aborting the run. When `checkpoint_path`
/// points at an existing checkpoint the run resumes from its epoch.
pub fn evolve<E>(
    params: &EvolutionParams,
    bounds: &LayoutBounds,
    mut eval: E,
    rng: &mut dyn RngCore,
    checkpoint_path: Option<&Path>,
) -> Result<EvolveOutcome>
where
    E: FnMut(&LayoutConfig) -> Result<FitnessReport>,
{
    params.validate()?;
    let mut best_so_far: Option<Candidate> = None;
    let mut start_epoch = 0usize;
    let mut population: Vec<LayoutConfig> = Vec::with_capacity(params.population);

    if let Some(path) = checkpoint_path {
        if path.exists() {
            let ckpt = Checkpoint::load(path)?;
            start_epoch = ckpt.epoch + 1;
            population.push(ckpt.config.clone());
            best_so_far = Some(Candidate {
                config: ckpt.config,
                fitness_ns: ckpt.fitness_ns,
                polarity_observed: ckpt.polarity_observed,
                valid: ckpt.fitness_ns > 0,
            });
        }
    }
    while population.len() < params.population {
        population.push(layout::random_config(rng, bounds));
    }

    let mut epochs_log = Vec::new();
    let mut scored = score_population(&population, &mut eval, params);
    record_epoch(
        start_epoch,
        &scored,
        &mut best_so_far,
        checkpoint_path,
        &mut epochs_log,
    )?;

    for epoch in (start_epoch + 1)..=(start_epoch + params.epochs) {
        let survivors = select_best(&scored, params.retention);
        population = next_generation(&survivors, params, bounds, rng);
        scored = score_population(&population, &mut eval, params);
        record_epoch(epoch, &scored, &mut best_so_far, checkpoint_path, &mut epochs_log)?;
    }

    let mut ranked = scored;
    ranked.sort_by(|a, b| {
        b.valid
            .cmp(&a.valid)
            .then(b.fitness_ns.cmp(&a.fitness_ns))
            .then(a.config.total_size.cmp(&b.config.total_size))
            .then(a.config.seed.cmp(&b.config.seed))
    });
    let best = best_so_far.unwrap_or_else(|| ranked[0].clone());
    Ok(EvolveOutcome {
        ranked,
        best,
        epochs: epochs_log,
    })
}

fn score_population<E>(
    population: &[LayoutConfig],
    eval: &mut E,
    params: &EvolutionParams,
) -> Vec<Candidate>
where
    E: FnMut(&LayoutConfig) -> Result<FitnessReport>,
{
    population
        .iter()
        .map(|config| match eval(config) {
            Ok(report) => Candidate::from_report(config.clone(), &report, params.polarity),
            Err(_) => Candidate::invalid(config.clone()),
        })
        .collect()
}

fn record_epoch(
    epoch: usize,
    scored: &[Candidate],
    best_so_far: &mut Option<Candidate>,
    checkpoint_path: Option<&Path>,
    log_out: &mut Vec<EpochSummary>,
) -> Result<()> {
    let epoch_best = scored
        .iter()
        .filter(|c| c.valid)
        .max_by(|a, b| {
            a.fitness_ns
                .cmp(&b.fitness_ns)
                .then(b.config.total_size.cmp(&a.config.total_size))
                .then(b.config.seed.cmp(&a.config.seed))
        })
        .cloned();
    if let Some(cand) = epoch_best {
        let better = best_so_far
            .as_ref()
            .map(|b| cand.fitness_ns > b.fitness_ns)
            .unwrap_or(true);
        if better {
            *best_so_far = Some(cand);
        }
    }
    let validity_rate =
        scored.iter().filter(|c| c.valid).count() as f64 / scored.len().max(1) as f64;
    let best_gap = best_so_far.as_ref().map(|b| b.fitness_ns).unwrap_or(0);
    log::info!("epoch={epoch} best_gap_ns={best_gap} validity={validity_rate:.3}");
    log_out.push(EpochSummary {
        epoch,
        best_gap_ns: best_gap,
        validity_rate,
    });
    if let (Some(path), Some(best)) = (checkpoint_path, best_so_far.as_ref()) {
        Checkpoint {
            epoch,
            fitness_ns: best.fitness_ns,
            polarity_observed: best.polarity_observed,
            config: best.config.clone(),
        }
        .save(path)?;
    }
    Ok(())
}

fn next_generation(
    survivors: &[Candidate],
    params: &EvolutionParams,
    bounds: &LayoutBounds,
    rng: &mut dyn RngCore,
) -> Vec<LayoutConfig> {
    let pop = params.population;
    let mut next = Vec::with_capacity(pop);
    if survivors.is_empty() {
        // Nothing worth keeping: restart this slice of the search space.
        while next.len() < pop {
            next.push(layout::random_config(rng, bounds));
        }
        return next;
    }
    let retained = survivors.len().min(pop);
    let mutated = ((params.mutated_fraction * pop as f64).round() as usize).min(pop - retained);
    for c in survivors.iter().take(retained) {
        next.push(c.config.clone());
    }
    for i in 0..mutated {
        let parent = &survivors[i % survivors.len()].config;
        next.push(layout::mutate(parent, rng, bounds));
    }
    while next.len() < pop {
        next.push(layout::random_config(rng, bounds));
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::CompressionLevel;
    use crate::layout::FillerKind;
    use crate::timing::FakeClock;
    use rand_chacha::ChaCha8Rng;

    fn bounds() -> LayoutBounds {
        LayoutBounds::new(CodecId::Deflate, b"cookie=".to_vec(), 6)
            .with_total_size(1024..=4096)
            .with_prepend_max(0)
    }

    fn config() -> LayoutConfig {
        LayoutConfig {
            seed: 11,
            total_size: 2048,
            secret_offset: 128,
            guess_offset: 1024,
            guess_repetitions: 1,
            guess_stride: 13,
            compression_level: CompressionLevel::for_codec(CodecId::Deflate, 6).unwrap(),
            entropy_modulus: 256,
            prepend_compressible_len: 0,
            prefix: b"cookie=".to_vec(),
            filler: FillerKind::SeededRandom,
        }
    }

    fn guesses() -> Vec<Vec<u8>> {
        vec![b"SECRET".to_vec(), b"FOOBAR".to_vec(), b"BAZQUX".to_vec()]
    }

    /// Deterministic synthetic fitness: gap derived from genome fields, the
    /// correct guess always fastest.
    fn synthetic_eval(config: &LayoutConfig) -> Result<FitnessReport> {
        let base = 1000 + (config.seed % 97) * 10 + (config.entropy_modulus as u64) * 3;
        let gap = (config.seed % 1000) + config.guess_repetitions as u64 * 50;
        Ok(FitnessReport {
            per_guess_min_ns: vec![base, base + gap, base + gap + 200],
            correct_index: 0,
            gap_ns: gap,
            correct_rank: 1,
        })
    }

    #[test]
    fn single_guess_is_a_contract_error() {
        let err = evaluate_fitness(
            &config(),
            &FitnessTarget::raw(CodecId::Deflate),
            b"SECRET",
            &[b"SECRET".to_vec()],
            3,
            &FakeClock::new(vec![]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn fitness_reports_per_guess_times_and_rank() {
        // 3 guesses x 3 interleaved rounds with distinct plateaus per guess.
        let mut durations = Vec::new();
        durations.extend([5000u64, 9000, 7000]);
        durations.extend([5200u64, 9200, 7200]);
        durations.extend([5100u64, 9100, 7100]);
        let clock = FakeClock::from_durations(&durations);
        let report = evaluate_fitness(
            &config(),
            &FitnessTarget::raw(CodecId::Deflate),
            b"SECRET",
            &guesses(),
            3,
            &clock,
        )
        .unwrap();
        assert_eq!(report.per_guess_min_ns, vec![5000, 9000, 7000]);
        assert_eq!(report.correct_rank, 1);
        assert_eq!(report.gap_ns, 2000);
        assert_eq!(report.observed_polarity(), Some(ObservedPolarity::Fastest));
    }

    #[test]
    fn min_aggregation_ignores_one_sided_noise() {
        // one clean round, two rounds with large one-sided positive noise
        let clean: Vec<u64> = vec![5000, 9000, 7000, 5000, 9000, 7000, 5000, 9000, 7000];
        let noisy: Vec<u64> = vec![
            5000, 9000, 7000, 905_000, 909_000, 907_000, 905_000, 909_000, 907_000,
        ];
        let target = FitnessTarget::raw(CodecId::Deflate);
        let r_clean = evaluate_fitness(
            &config(),
            &target,
            b"SECRET",
            &guesses(),
            3,
            &FakeClock::from_durations(&clean),
        )
        .unwrap();
        let r_noisy = evaluate_fitness(
            &config(),
            &target,
            b"SECRET",
            &guesses(),
            3,
            &FakeClock::from_durations(&noisy),
        )
        .unwrap();
        assert_eq!(r_clean, r_noisy);
    }

    #[test]
    fn policy_rejection_reports_zero_time() {
        // Random filler at modulus 256 never saves 25% under the cell
        // policy, so every guess reports 0 and no polarity is observable.
        let target = FitnessTarget {
            codec: CodecId::Pglz,
            policy: Some(AcceptancePolicy::pglz()),
            colocated: false,
            shift_window: false,
        };
        let mut c = config();
        c.compression_level = CompressionLevel::for_codec(CodecId::Pglz, 1).unwrap();
        let report = evaluate_fitness(
            &c,
            &target,
            b"SECRET",
            &guesses(),
            2,
            &FakeClock::new(vec![]),
        )
        .unwrap();
        assert_eq!(report.per_guess_min_ns, vec![0, 0, 0]);
        assert_eq!(report.gap_ns, 0);
        assert_eq!(report.observed_polarity(), None);
        let cand = Candidate::from_report(c, &report, Polarity::Either);
        assert!(!cand.valid);
        assert_eq!(cand.fitness_ns, 0);
    }

    #[test]
    fn select_best_sizes_and_tiebreaks() {
        let mut cands = Vec::new();
        for i in 0..1000u64 {
            let mut cfg = config();
            cfg.seed = i;
            cfg.total_size = 1024 + (i as usize % 7) * 128;
            cands.push(Candidate {
                config: cfg,
                fitness_ns: (i % 100) as i64,
                polarity_observed: Some(ObservedPolarity::Fastest),
                valid: true,
            });
        }
        let survivors = select_best(&cands, 0.05);
        assert_eq!(survivors.len(), 50);
        assert!(survivors
            .windows(2)
            .all(|w| w[0].fitness_ns >= w[1].fitness_ns));
        for w in survivors.windows(2) {
            if w[0].fitness_ns == w[1].fitness_ns {
                assert!(
                    w[0].config.total_size < w[1].config.total_size
                        || (w[0].config.total_size == w[1].config.total_size
                            && w[0].config.seed < w[1].config.seed)
                );
            }
        }
    }

    #[test]
    fn select_best_excludes_invalid() {
        let cands: Vec<Candidate> = (0..10).map(|_| Candidate::invalid(config())).collect();
        assert!(select_best(&cands, 0.5).is_empty());
    }

    #[test]
    fn zero_epochs_returns_scored_initial_population() {
        let params = EvolutionParams {
            epochs: 0,
            population: 20,
            ..EvolutionParams::desk_scale(Polarity::CorrectFastest)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = evolve(&params, &bounds(), synthetic_eval, &mut rng, None).unwrap();
        assert_eq!(out.ranked.len(), 20);
        assert_eq!(out.epochs.len(), 1);
        assert!(out.ranked[0].fitness_ns >= out.ranked[19].fitness_ns);
    }

    #[test]
    fn seeded_run_is_reproducible() {
        let params = EvolutionParams {
            epochs: 5,
            population: 20,
            ..EvolutionParams::desk_scale(Polarity::CorrectFastest)
        };
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            evolve(&params, &bounds(), synthetic_eval, &mut rng, None).unwrap()
        };
        let a = run(7);
        let b = run(7);
        assert_eq!(a.best.config, b.best.config);
        assert_eq!(a.best.fitness_ns, b.best.fitness_ns);
        let ac: Vec<_> = a.ranked.iter().map(|c| c.config.clone()).collect();
        let bc: Vec<_> = b.ranked.iter().map(|c| c.config.clone()).collect();
        assert_eq!(ac, bc);
    }

    #[test]
    fn best_so_far_is_monotone_across_epochs() {
        let params = EvolutionParams {
            epochs: 10,
            population: 30,
            ..EvolutionParams::desk_scale(Polarity::CorrectFastest)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = evolve(&params, &bounds(), synthetic_eval, &mut rng, None).unwrap();
        assert_eq!(out.epochs.len(), 11);
        for w in out.epochs.windows(2) {
            assert!(w[1].best_gap_ns >= w[0].best_gap_ns);
        }
    }

    #[test]
    fn polarity_discipline_on_returned_candidates() {
        let params = EvolutionParams {
            epochs: 3,
            population: 20,
            polarity: Polarity::CorrectFastest,
            ..EvolutionParams::desk_scale(Polarity::CorrectFastest)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = evolve(&params, &bounds(), synthetic_eval, &mut rng, None).unwrap();
        for c in out.ranked.iter().filter(|c| c.valid) {
            assert_eq!(c.polarity_observed, Some(ObservedPolarity::Fastest));
        }
    }

    #[test]
    fn all_invalid_generation_goes_fully_random() {
        let params = EvolutionParams {
            epochs: 2,
            population: 10,
            ..EvolutionParams::desk_scale(Polarity::CorrectFastest)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut calls = 0usize;
        let out = evolve(
            &params,
            &bounds(),
            |_| {
                calls += 1;
                Err(Error::contract("always invalid"))
            },
            &mut rng,
            None,
        )
        .unwrap();
        assert_eq!(calls, 30); // 3 scored generations of 10
        assert!(out.ranked.iter().all(|c| !c.valid));
        assert!(out.epochs.iter().all(|e| e.validity_rate == 0.0));
    }

    #[test]
    fn checkpoint_roundtrip_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("best.toml");
        let params = EvolutionParams {
            epochs: 3,
            population: 10,
            ..EvolutionParams::desk_scale(Polarity::CorrectFastest)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let first = evolve(&params, &bounds(), synthetic_eval, &mut rng, Some(&path)).unwrap();
        let ckpt = Checkpoint::load(&path).unwrap();
        assert_eq!(ckpt.epoch, 3);
        assert_eq!(ckpt.fitness_ns, first.best.fitness_ns);
        assert_eq!(ckpt.config, first.best.config);

        // Resuming continues the epoch counter and never regresses the best.
        let more = EvolutionParams { epochs: 2, ..params };
        let resumed = evolve(&more, &bounds(), synthetic_eval, &mut rng, Some(&path)).unwrap();
        assert!(resumed.best.fitness_ns >= first.best.fitness_ns);
        let ckpt2 = Checkpoint::load(&path).unwrap();
        assert_eq!(ckpt2.epoch, 6); // resumed at 4, ran 2 more generations
    }

    #[test]
    fn generation_composition_adds_up() {
        let params = EvolutionParams::desk_scale(Polarity::Either);
        let b = bounds();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let survivors: Vec<Candidate> = (0..5)
            .map(|i| {
                let mut cfg = layout::random_config(&mut rng, &b);
                cfg.seed = i;
                Candidate {
                    config: cfg,
                    fitness_ns: 100 + i as i64,
                    polarity_observed: Some(ObservedPolarity::Fastest),
                    valid: true,
                }
            })
            .collect();
        let next = next_generation(&survivors, &params, &b, &mut rng);
        assert_eq!(next.len(), params.population);
        for (i, s) in survivors.iter().enumerate() {
            assert_eq!(next[i], s.config);
        }
    }
}
