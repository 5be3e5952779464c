//! High-resolution, low-noise latency measurement with fixed aggregation
//! conventions (minimum, median, mean, optional trimmed mean).
//!
//! All timed regions in a process are serialized behind one token so two
//! measurements can never interleave. The timer prefers the serializing
//! cycle counter where available, calibrated against the OS monotonic clock
//! at startup, and falls back to the monotonic clock otherwise.

use crate::codec::{self, CodecId, CompressedBlob, CompressionLevel};
use crate::error::{Error, Result};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::hint::black_box;
use std::sync::{Mutex, MutexGuard, OnceLock, PoisonError};
use std::time::Instant;

/// Nanosecond timestamp source. Implementations must be monotone
/// non-decreasing across successive calls in one thread.
pub trait Clock: Send + Sync {
    fn now_ns(&self) -> u64;
    fn describe(&self) -> String;
}

/// OS monotonic clock.
pub struct MonotonicClock {
    origin: Instant,
}

impl MonotonicClock {
    pub fn new() -> Self {
        MonotonicClock {
            origin: Instant::now(),
        }
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now_ns(&self) -> u64 {
        self.origin.elapsed().as_nanos() as u64
    }

    fn describe(&self) -> String {
        "monotonic".to_string()
    }
}

/// Serializing cycle counter, converted to nanoseconds with a startup
/// calibration constant.
#[cfg(target_arch = "x86_64")]
pub struct CycleClock {
    ns_per_tick: f64,
}

#[cfg(target_arch = "x86_64")]
impl CycleClock {
    #[inline]
    fn ticks() -> u64 {
        unsafe {
            core::arch::x86_64::_mm_lfence();
            let t = core::arch::x86_64::_rdtsc();
            core::arch::x86_64::_mm_lfence();
            t
        }
    }

    /// Calibrate tick duration against the monotonic clock. Returns None if
    /// the counter looks unusable (zero, non-monotone, or absurd rate).
    pub fn calibrated() -> Option<Self> {
        let mut rates = Vec::new();
        for _ in 0..3 {
            let i0 = Instant::now();
            let t0 = Self::ticks();
            std::thread::sleep(std::time::Duration::from_millis(10));
            let t1 = Self::ticks();
            let dt = i0.elapsed().as_nanos() as f64;
            if t1 <= t0 {
                return None;
            }
            rates.push(dt / (t1 - t0) as f64);
        }
        rates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let ns_per_tick = rates[1];
        if !(0.01..=100.0).contains(&ns_per_tick) {
            return None;
        }
        // Quick monotonicity shakeout.
        let mut last = Self::ticks();
        for _ in 0..1000 {
            let now = Self::ticks();
            if now < last {
                return None;
            }
            last = now;
        }
        Some(CycleClock { ns_per_tick })
    }

    pub fn ns_per_tick(&self) -> f64 {
        self.ns_per_tick
    }
}

#[cfg(target_arch = "x86_64")]
impl Clock for CycleClock {
    fn now_ns(&self) -> u64 {
        (Self::ticks() as f64 * self.ns_per_tick) as u64
    }

    fn describe(&self) -> String {
        format!("tsc (ns_per_tick={:.4})", self.ns_per_tick)
    }
}

/// Replayable clock for deterministic tests: yields a scripted sequence of
/// timestamps, then keeps advancing by the last step.
pub struct FakeClock {
    state: Mutex<FakeClockState>,
}

struct FakeClockState {
    scripted: std::collections::VecDeque<u64>,
    current: u64,
}

impl FakeClock {
    pub fn new(timestamps: Vec<u64>) -> Self {
        FakeClock {
            state: Mutex::new(FakeClockState {
                scripted: timestamps.into(),
                current: 0,
            }),
        }
    }

    /// Convenience: a clock whose consecutive call pairs bracket the given
    /// durations (ts = cumulative sum of durations interleaved with zeros).
    pub fn from_durations(durations: &[u64]) -> Self {
        let mut ts = Vec::with_capacity(durations.len() * 2);
        let mut now = 0u64;
        for &d in durations {
            ts.push(now);
            now += d;
            ts.push(now);
            now += 1;
        }
        Self::new(ts)
    }
}

impl Clock for FakeClock {
    fn now_ns(&self) -> u64 {
        let mut st = self.state.lock().unwrap_or_else(PoisonError::into_inner);
        if let Some(t) = st.scripted.pop_front() {
            st.current = t;
        } else {
            st.current += 1;
        }
        st.current
    }

    fn describe(&self) -> String {
        "fake".to_string()
    }
}

static DEFAULT_CLOCK: OnceLock<Box<dyn Clock>> = OnceLock::new();

/// Process-wide clock: calibrated cycle counter when usable, monotonic
/// otherwise.
pub fn default_clock() -> &'static dyn Clock {
    DEFAULT_CLOCK
        .get_or_init(|| {
            #[cfg(target_arch = "x86_64")]
            {
                if let Some(c) = CycleClock::calibrated() {
                    return Box::new(c) as Box<dyn Clock>;
                }
            }
            Box::new(MonotonicClock::new())
        })
        .as_ref()
}

/// Monotonic nanosecond timestamp from the process-wide clock.
pub fn now_ns() -> u64 {
    default_clock().now_ns()
}

static TIMING_TOKEN: Mutex<()> = Mutex::new(());

/// Exclusive token serializing every timed region in the process.
pub fn timing_token() -> MutexGuard<'static, ()> {
    TIMING_TOKEN.lock().unwrap_or_else(PoisonError::into_inner)
}

/// Pin the calling thread to one core, best effort. Reduces floor drift on
/// multi-core boxes; measurement works without it, just noisier.
#[cfg(target_os = "linux")]
pub fn pin_to_core(core: usize) -> bool {
    unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_SET(core, &mut set);
        libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set) == 0
    }
}

#[cfg(not(target_os = "linux"))]
pub fn pin_to_core(_core: usize) -> bool {
    false
}

/// How repeated samples collapse to one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    Min,
    Median,
    Mean,
}

/// Repetition and aggregation settings for one measurement.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MeasurementPlan {
    pub warmup_iterations: usize,
    pub iterations: usize,
    pub aggregator: Aggregator,
    /// Fraction of the highest samples dropped before computing the mean
    /// (0.0 disables trimming; 0.06 mirrors outlier-trimmed reporting).
    pub mean_trim_fraction: f64,
}

impl MeasurementPlan {
    pub fn new(iterations: usize, aggregator: Aggregator) -> Result<Self> {
        if iterations == 0 {
            return Err(Error::config("iterations", "must be at least 1"));
        }
        Ok(MeasurementPlan {
            warmup_iterations: 1000,
            iterations,
            aggregator,
            mean_trim_fraction: 0.0,
        })
    }

    pub fn with_warmup(mut self, warmup: usize) -> Self {
        self.warmup_iterations = warmup;
        self
    }
}

/// Aggregate of repeated nanosecond samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub n: usize,
    pub min_ns: u64,
    pub median_ns: u64,
    pub mean_ns: f64,
    /// Standard deviation as a percentage of the mean.
    pub stddev_pct: f64,
}

impl TimingStats {
    pub fn from_samples(samples: &[u64], mean_trim_fraction: f64) -> Self {
        assert!(!samples.is_empty(), "stats need at least one sample");
        let mut sorted = samples.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let min_ns = sorted[0];
        let median_ns = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2
        };
        let trimmed = if mean_trim_fraction > 0.0 {
            let drop = ((n as f64) * mean_trim_fraction).floor() as usize;
            &sorted[..n - drop.min(n - 1)]
        } else {
            &sorted[..]
        };
        let mean = trimmed.iter().map(|&x| x as f64).sum::<f64>() / trimmed.len() as f64;
        let var = trimmed
            .iter()
            .map(|&x| {
                let d = x as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / trimmed.len() as f64;
        let stddev_pct = if mean > 0.0 {
            var.sqrt() / mean * 100.0
        } else {
            0.0
        };
        TimingStats {
            n,
            min_ns,
            median_ns,
            mean_ns: mean,
            stddev_pct,
        }
    }

    /// The value selected by an aggregator.
    pub fn aggregate(&self, aggregator: Aggregator) -> f64 {
        match aggregator {
            Aggregator::Min => self.min_ns as f64,
            Aggregator::Median => self.median_ns as f64,
            Aggregator::Mean => self.mean_ns,
        }
    }
}

/// Time `f` under the plan with the given clock. The closure's return value
/// is fed to a black-box sink so the timed work cannot be elided.
pub fn measure_fn<T>(
    plan: &MeasurementPlan,
    clock: &dyn Clock,
    mut f: impl FnMut() -> T,
) -> TimingStats {
    let _token = timing_token();
    for _ in 0..plan.warmup_iterations {
        black_box(f());
    }
    let mut samples = Vec::with_capacity(plan.iterations);
    for _ in 0..plan.iterations {
        let t0 = clock.now_ns();
        let out = f();
        let t1 = clock.now_ns();
        black_box(out);
        samples.push(t1.saturating_sub(t0));
    }
    TimingStats::from_samples(&samples, plan.mean_trim_fraction)
}

/// Time repeated decompression of a blob. The decompressed bytes are folded
/// into a sink inside the timed region; the fold result is returned so
/// callers (and tests) can prove the work happened.
pub fn measure_decompression(blob: &CompressedBlob, plan: &MeasurementPlan) -> Result<TimingStats> {
    measure_decompression_with(blob, plan, default_clock()).map(|(stats, _)| stats)
}

pub fn measure_decompression_with(
    blob: &CompressedBlob,
    plan: &MeasurementPlan,
    clock: &dyn Clock,
) -> Result<(TimingStats, u64)> {
    // Fail fast on a bad payload before entering the timed loop.
    let mut scratch = codec::decompress(blob)?;
    scratch.reserve(blob.original_len);
    let mut sink = 0u64;
    let mut failure = None;
    let stats = measure_fn(plan, clock, || {
        match codec::decompress_into(blob, &mut scratch) {
            Ok(()) => {
                sink = sink
                    .wrapping_add(scratch.first().copied().unwrap_or(0) as u64)
                    .wrapping_add(scratch.last().copied().unwrap_or(0) as u64)
                    .wrapping_add(scratch.len() as u64);
            }
            Err(e) => failure = Some(e),
        };
        scratch.len()
    });
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((stats, sink))
}

/// Time repeated compression of `data`.
pub fn measure_compression(
    codec_id: CodecId,
    level: CompressionLevel,
    data: &[u8],
    plan: &MeasurementPlan,
) -> Result<TimingStats> {
    codec::compress(codec_id, level, data)?;
    let mut failure = None;
    let stats = measure_fn(plan, default_clock(), || {
        match codec::compress(codec_id, level, data) {
            Ok(blob) => blob.payload.len(),
            Err(e) => {
                failure = Some(e);
                0
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(stats)
}

/// Entropy class of a 4 KiB characterization page.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyKind {
    FullyCompressible,
    PartiallyCompressible,
    Incompressible,
}

impl EntropyKind {
    pub const ALL: [EntropyKind; 3] = [
        EntropyKind::FullyCompressible,
        EntropyKind::PartiallyCompressible,
        EntropyKind::Incompressible,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EntropyKind::FullyCompressible => "fully_compressible",
            EntropyKind::PartiallyCompressible => "partially_compressible",
            EntropyKind::Incompressible => "incompressible",
        }
    }
}

impl fmt::Display for EntropyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const PAGE_SIZE: usize = 4096;

/// A 4 KiB page of a given entropy class.
#[derive(Debug, Clone)]
pub struct EntropyInput {
    pub kind: EntropyKind,
    pub page: Vec<u8>,
}

impl EntropyInput {
    /// Deterministic page construction: one repeated byte, half random plus
    /// half repeated, or fully random.
    pub fn generate(kind: EntropyKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let page = match kind {
            EntropyKind::FullyCompressible => vec![0x41u8; PAGE_SIZE],
            EntropyKind::PartiallyCompressible => {
                let mut v: Vec<u8> = (0..PAGE_SIZE / 2).map(|_| rng.gen()).collect();
                v.extend(std::iter::repeat(0x41u8).take(PAGE_SIZE / 2));
                v
            }
            EntropyKind::Incompressible => (0..PAGE_SIZE).map(|_| rng.gen()).collect(),
        };
        EntropyInput { kind, page }
    }
}

/// One characterization row. `stats` is absent where the codec's storage
/// layer would never decompress that class (incompressible input under the
/// savings-based codec).
#[derive(Debug, Clone)]
pub struct CharacterizeRow {
    pub kind: EntropyKind,
    pub stats: Option<TimingStats>,
}

/// Decompression timing for the three entropy classes.
pub fn characterize(
    codec_id: CodecId,
    level: CompressionLevel,
    plan: &MeasurementPlan,
    seed: u64,
) -> Result<Vec<CharacterizeRow>> {
    let mut rows = Vec::with_capacity(3);
    for kind in EntropyKind::ALL {
        if codec_id == CodecId::Pglz && kind == EntropyKind::Incompressible {
            rows.push(CharacterizeRow { kind, stats: None });
            continue;
        }
        let input = EntropyInput::generate(kind, seed);
        let blob = codec::compress(codec_id, level, &input.page)?;
        let stats = measure_decompression(&blob, plan)?;
        rows.push(CharacterizeRow {
            kind,
            stats: Some(stats),
        });
    }
    Ok(rows)
}

/// Compression timing for the three entropy classes.
pub fn characterize_compression(
    codec_id: CodecId,
    level: CompressionLevel,
    plan: &MeasurementPlan,
    seed: u64,
) -> Result<Vec<CharacterizeRow>> {
    let mut rows = Vec::with_capacity(3);
    for kind in EntropyKind::ALL {
        if codec_id == CodecId::Pglz && kind == EntropyKind::Incompressible {
            rows.push(CharacterizeRow { kind, stats: None });
            continue;
        }
        let input = EntropyInput::generate(kind, seed);
        let stats = measure_compression(codec_id, level, &input.page, plan)?;
        rows.push(CharacterizeRow {
            kind,
            stats: Some(stats),
        });
    }
    Ok(rows)
}

pub const CSV_HEADER: &str = "codec,level,entropy_kind,n,min_ns,median_ns,mean_ns,stddev_pct";

/// CSV rows for a characterization table, one line per present entropy kind.
pub fn characterize_csv(codec_id: CodecId, level: CompressionLevel, rows: &[CharacterizeRow]) -> String {
    let mut out = String::new();
    for row in rows {
        if let Some(s) = &row.stats {
            out.push_str(&format!(
                "{},{},{},{},{},{},{:.2},{:.2}\n",
                codec_id,
                level,
                row.kind,
                s.n,
                s.min_ns,
                s.median_ns,
                s.mean_ns,
                s.stddev_pct
            ));
        }
    }
    out
}
