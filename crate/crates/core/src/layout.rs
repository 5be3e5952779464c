//! Deterministic construction of attack byte-buffers from a genome, plus the
//! randomize and mutate operators the evolutionary search drives.
//!
//! A genome describes filler generation (seed and entropy modulus), where the
//! secret and the repeated guesses sit, the compression level, and an
//! optional compressible prepend. Building a buffer is a pure function of
//! (genome, secret, guess): filler bytes never depend on the guess, so any
//! timing difference between two guesses is attributable to guess content
//! alone.

use crate::codec::{CodecId, CompressionLevel};
use crate::error::{Error, Result};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::ops::{Range, RangeInclusive};

pub const MIN_TOTAL_SIZE: usize = 1024;
pub const MAX_TOTAL_SIZE: usize = 65536;

/// Byte used for the compressible prepend region.
pub const PREPEND_BYTE: u8 = 0x41;

const PAD_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Seeds stay within the positive 63-bit range so the checkpoint text
/// format (signed integers) can carry them.
pub const SEED_MASK: u64 = i64::MAX as u64;

/// How filler bytes are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillerKind {
    /// Seeded random bytes reduced modulo the entropy modulus.
    SeededRandom,
    /// Cyclic counter 0..period, for hand-built reference layouts.
    Cycle { period: u16 },
}

impl FillerKind {
    pub fn is_default(&self) -> bool {
        *self == FillerKind::SeededRandom
    }
}

impl Default for FillerKind {
    fn default() -> Self {
        FillerKind::SeededRandom
    }
}

/// The search genome: everything needed to deterministically rebuild one
/// attack buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutConfig {
    pub seed: u64,
    pub total_size: usize,
    pub secret_offset: usize,
    pub guess_offset: usize,
    pub guess_repetitions: usize,
    pub guess_stride: usize,
    pub compression_level: CompressionLevel,
    pub entropy_modulus: u16,
    pub prepend_compressible_len: usize,
    #[serde(with = "prefix_serde")]
    pub prefix: Vec<u8>,
    #[serde(default, skip_serializing_if = "FillerKind::is_default")]
    pub filler: FillerKind,
}

/// Prefixes are almost always printable protocol strings; serialize them as
/// text when possible and fall back to a byte array otherwise.
mod prefix_serde {
    use serde::de::{self, Deserializer, SeqAccess, Visitor};
    use serde::ser::Serializer;

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        if !bytes.is_empty() && bytes.iter().all(|b| (0x20..0x7f).contains(b)) {
            s.serialize_str(std::str::from_utf8(bytes).expect("printable ascii"))
        } else {
            s.collect_seq(bytes.iter())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        struct PrefixVisitor;

        impl<'de> Visitor<'de> for PrefixVisitor {
            type Value = Vec<u8>;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a string or an array of bytes")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Vec<u8>, E> {
                Ok(v.as_bytes().to_vec())
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Vec<u8>, A::Error> {
                let mut out = Vec::new();
                while let Some(b) = seq.next_element::<u8>()? {
                    out.push(b);
                }
                Ok(out)
            }
        }

        d.deserialize_any(PrefixVisitor)
    }
}

impl LayoutConfig {
    /// Checkpoint text form, one field per key.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("layout config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("layout", e.to_string()))
    }

    /// Structural checks that do not need span lengths.
    fn validate_scalars(&self) -> Result<()> {
        if !(MIN_TOTAL_SIZE..=MAX_TOTAL_SIZE).contains(&self.total_size) {
            return Err(Error::config(
                "total_size",
                format!(
                    "{} outside [{MIN_TOTAL_SIZE}, {MAX_TOTAL_SIZE}]",
                    self.total_size
                ),
            ));
        }
        if !(1..=256).contains(&self.entropy_modulus) {
            return Err(Error::config(
                "entropy_modulus",
                format!("{} outside [1, 256]", self.entropy_modulus),
            ));
        }
        if self.guess_repetitions == 0 {
            return Err(Error::config("guess_repetitions", "must be at least 1"));
        }
        Ok(())
    }

    /// Full invariant check for concrete span lengths.
    pub fn validate_spans(&self, secret_span_len: usize, guess_span_len: usize) -> Result<()> {
        self.validate_scalars()?;
        let secret_end = self.secret_offset + secret_span_len;
        if secret_end > self.total_size {
            return Err(Error::config(
                "secret_offset",
                format!(
                    "secret span {}..{secret_end} exceeds total_size {}",
                    self.secret_offset, self.total_size
                ),
            ));
        }
        if self.guess_repetitions > 1 && self.guess_stride < guess_span_len {
            return Err(Error::config(
                "guess_stride",
                format!(
                    "stride {} smaller than guess span {guess_span_len}; repetitions would overlap",
                    self.guess_stride
                ),
            ));
        }
        for rep in 0..self.guess_repetitions {
            let start = self.guess_offset + rep * self.guess_stride;
            let end = start + guess_span_len;
            if end > self.total_size {
                return Err(Error::config(
                    "guess_offset",
                    format!(
                        "guess repetition {rep} span {start}..{end} exceeds total_size {}",
                        self.total_size
                    ),
                ));
            }
            if secret_span_len > 0 && guess_span_len > 0 && start < secret_end && self.secret_offset < end {
                return Err(Error::config(
                    "guess_offset",
                    format!("guess repetition {rep} span {start}..{end} overlaps secret span"),
                ));
            }
        }
        Ok(())
    }

    fn filler_bytes(&self) -> Vec<u8> {
        match self.filler {
            FillerKind::SeededRandom => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let modulus = self.entropy_modulus as u32;
                (0..self.total_size)
                    .map(|_| (rng.next_u32() % modulus) as u8)
                    .collect()
            }
            FillerKind::Cycle { period } => (0..self.total_size)
                .map(|i| (i % period.max(1) as usize) as u8)
                .collect(),
        }
    }

    /// Guess-span bytes for dictionary/bytewise mode: prefix, then guess,
    /// padded with seed-derived bytes up to the secret length so every
    /// candidate buffer has identical length.
    pub fn guess_span_bytes(&self, guess: &[u8], secret_len: usize) -> Result<Vec<u8>> {
        if guess.len() > secret_len {
            return Err(Error::contract(format!(
                "guess length {} exceeds secret length {secret_len}",
                guess.len()
            )));
        }
        let mut span = Vec::with_capacity(self.prefix.len() + secret_len);
        span.extend_from_slice(&self.prefix);
        span.extend_from_slice(guess);
        let mut pad_rng = ChaCha8Rng::seed_from_u64(self.seed ^ PAD_SEED_SALT);
        let modulus = self.entropy_modulus as u32;
        span.extend((0..secret_len - guess.len()).map(|_| (pad_rng.next_u32() % modulus) as u8));
        Ok(span)
    }

    /// Guess-span bytes for shift mode: a fixed-width window holding the
    /// tail of prefix-plus-guess, one byte wider than the prefix.
    pub fn shift_window_bytes(&self, guess: &[u8]) -> Result<Vec<u8>> {
        let window = self.prefix.len() + 1;
        let mut full = Vec::with_capacity(self.prefix.len() + guess.len());
        full.extend_from_slice(&self.prefix);
        full.extend_from_slice(guess);
        if full.len() < window {
            return Err(Error::contract(format!(
                "prefix plus guess ({}) shorter than shift window {window}",
                full.len()
            )));
        }
        Ok(full[full.len() - window..].to_vec())
    }

    pub fn secret_span_bytes(&self, secret: &[u8]) -> Vec<u8> {
        let mut span = Vec::with_capacity(self.prefix.len() + secret.len());
        span.extend_from_slice(&self.prefix);
        span.extend_from_slice(secret);
        span
    }
}

/// A fully materialized buffer with the index ranges of the embedded spans.
#[derive(Debug, Clone)]
pub struct BuiltLayout {
    pub bytes: Vec<u8>,
    pub secret_span: Range<usize>,
    pub guess_spans: Vec<Range<usize>>,
}

fn build_with_spans(
    config: &LayoutConfig,
    secret_span: &[u8],
    guess_span: &[u8],
) -> Result<BuiltLayout> {
    config.validate_spans(secret_span.len(), guess_span.len())?;
    let prepend = config.prepend_compressible_len;
    let mut bytes = Vec::with_capacity(prepend + config.total_size);
    bytes.extend(std::iter::repeat(PREPEND_BYTE).take(prepend));
    bytes.extend(config.filler_bytes());
    let secret_start = prepend + config.secret_offset;
    bytes[secret_start..secret_start + secret_span.len()].copy_from_slice(secret_span);
    let mut guess_spans = Vec::with_capacity(config.guess_repetitions);
    for rep in 0..config.guess_repetitions {
        let start = prepend + config.guess_offset + rep * config.guess_stride;
        bytes[start..start + guess_span.len()].copy_from_slice(guess_span);
        guess_spans.push(start..start + guess_span.len());
    }
    Ok(BuiltLayout {
        bytes,
        secret_span: secret_start..secret_start + secret_span.len(),
        guess_spans,
    })
}

/// Build the page-style layout holding both the secret and the repeated
/// guess. Deterministic for fixed (config, secret, guess).
pub fn build_layout(config: &LayoutConfig, secret: &[u8], guess: &[u8]) -> Result<BuiltLayout> {
    let secret_span = config.secret_span_bytes(secret);
    let guess_span = config.guess_span_bytes(guess, secret.len())?;
    build_with_spans(config, &secret_span, &guess_span)
}

/// Like [`build_layout`] but with caller-supplied raw span bytes (shift
/// windows use this).
pub fn build_layout_raw(
    config: &LayoutConfig,
    secret_span: &[u8],
    guess_span: &[u8],
) -> Result<BuiltLayout> {
    build_with_spans(config, secret_span, guess_span)
}

/// The attacker-controlled portion for a colocating store: the victim
/// prepends its own prefix-plus-secret, so the payload holds only the
/// prepend region and the guess-bearing filler. `secret_offset` plays no
/// role here.
pub fn build_attack_payload(config: &LayoutConfig, guess_span: &[u8]) -> Result<BuiltLayout> {
    let mut cfg = config.clone();
    cfg.secret_offset = 0;
    build_with_spans(&cfg, &[], guess_span)
}

/// Sampling ranges for genome generation, plus the span geometry needed to
/// keep every sampled or mutated genome valid.
#[derive(Debug, Clone)]
pub struct LayoutBounds {
    pub codec: CodecId,
    pub total_size: RangeInclusive<usize>,
    pub guess_repetitions: RangeInclusive<usize>,
    pub entropy_modulus: RangeInclusive<u16>,
    pub prepend_max: usize,
    pub secret_span_len: usize,
    pub guess_span_len: usize,
    pub prefix: Vec<u8>,
    pub pin_secret_offset: Option<usize>,
}

impl LayoutBounds {
    /// Full-range bounds for a dictionary/bytewise campaign where the guess
    /// span matches the secret span.
    pub fn new(codec: CodecId, prefix: Vec<u8>, secret_len: usize) -> Self {
        let span = prefix.len() + secret_len;
        LayoutBounds {
            codec,
            total_size: MIN_TOTAL_SIZE..=MAX_TOTAL_SIZE,
            guess_repetitions: 1..=64,
            entropy_modulus: 1..=256,
            prepend_max: 8192,
            secret_span_len: span,
            guess_span_len: span,
            prefix,
            pin_secret_offset: None,
        }
    }

    /// Bounds for shift-window campaigns: the guess span is one byte wider
    /// than the prefix regardless of secret length.
    pub fn shift_window(codec: CodecId, prefix: Vec<u8>, secret_len: usize) -> Self {
        let mut b = Self::new(codec, prefix, secret_len);
        b.guess_span_len = b.prefix.len() + 1;
        b
    }

    pub fn with_total_size(mut self, range: RangeInclusive<usize>) -> Self {
        self.total_size = range;
        self
    }

    pub fn with_repetitions(mut self, range: RangeInclusive<usize>) -> Self {
        self.guess_repetitions = range;
        self
    }

    pub fn with_entropy_modulus(mut self, range: RangeInclusive<u16>) -> Self {
        self.entropy_modulus = range;
        self
    }

    pub fn with_prepend_max(mut self, max: usize) -> Self {
        self.prepend_max = max;
        self
    }

    pub fn with_pinned_secret_offset(mut self, offset: usize) -> Self {
        self.pin_secret_offset = Some(offset);
        self
    }

    fn max_span(&self) -> usize {
        self.secret_span_len.max(self.guess_span_len)
    }
}

fn sample_range_usize(rng: &mut dyn RngCore, range: &RangeInclusive<usize>) -> usize {
    rng.gen_range(range.clone())
}

/// Draw a genome uniformly within bounds, re-placing spans until the
/// invariants hold.
pub fn random_config(rng: &mut dyn RngCore, bounds: &LayoutBounds) -> LayoutConfig {
    for _ in 0..512 {
        let total_size = sample_range_usize(rng, &bounds.total_size)
            .max(MIN_TOTAL_SIZE)
            .min(MAX_TOTAL_SIZE);
        if bounds.max_span() * 2 > total_size {
            continue;
        }
        let reps = sample_range_usize(rng, &bounds.guess_repetitions).max(1);
        let gspan = bounds.guess_span_len;
        let max_stride = if reps > 1 {
            (total_size - gspan) / (reps - 1)
        } else {
            total_size - gspan
        };
        if max_stride < gspan {
            continue;
        }
        let guess_stride = rng.gen_range(gspan..=max_stride);
        let extent = (reps - 1) * guess_stride + gspan;
        if extent > total_size {
            continue;
        }
        let guess_offset = rng.gen_range(0..=total_size - extent);
        let secret_offset = match bounds.pin_secret_offset {
            Some(o) => o,
            None => rng.gen_range(0..=total_size - bounds.secret_span_len),
        };
        let level_range = bounds.codec.level_range();
        let level = rng.gen_range(level_range.clone());
        let config = LayoutConfig {
            seed: rng.gen::<u64>() & SEED_MASK,
            total_size,
            secret_offset,
            guess_offset,
            guess_repetitions: reps,
            guess_stride,
            compression_level: CompressionLevel::for_codec(bounds.codec, level)
                .expect("sampled inside range"),
            entropy_modulus: rng.gen_range(bounds.entropy_modulus.clone()),
            prepend_compressible_len: if bounds.prepend_max == 0 {
                0
            } else {
                rng.gen_range(0..=bounds.prepend_max)
            },
            prefix: bounds.prefix.clone(),
            filler: FillerKind::SeededRandom,
        };
        if config
            .validate_spans(bounds.secret_span_len, bounds.guess_span_len)
            .is_ok()
        {
            return config;
        }
    }
    // Canonical fallback placement: secret at the front, guesses packed
    // from the middle.
    let total_size = *bounds.total_size.start();
    let secret_offset = bounds.pin_secret_offset.unwrap_or(0);
    LayoutConfig {
        seed: rng.gen::<u64>() & SEED_MASK,
        total_size,
        secret_offset,
        guess_offset: total_size / 2,
        guess_repetitions: 1,
        guess_stride: bounds.guess_span_len,
        compression_level: bounds.codec.default_level(),
        entropy_modulus: *bounds.entropy_modulus.end(),
        prepend_compressible_len: 0,
        prefix: bounds.prefix.clone(),
        filler: FillerKind::SeededRandom,
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Gene {
    TotalSize,
    EntropyModulus,
    Repetitions,
    GuessOffset,
    GuessStride,
    SecretOffset,
    Level,
    PrependLen,
    Seed,
}

/// Return a copy with one to three genes perturbed, repaired to satisfy all
/// invariants.
pub fn mutate(config: &LayoutConfig, rng: &mut dyn RngCore, bounds: &LayoutBounds) -> LayoutConfig {
    let mut genes = vec![
        Gene::TotalSize,
        Gene::EntropyModulus,
        Gene::Repetitions,
        Gene::GuessOffset,
        Gene::GuessStride,
        Gene::Seed,
        Gene::PrependLen,
    ];
    if bounds.pin_secret_offset.is_none() {
        genes.push(Gene::SecretOffset);
    }
    if bounds.codec.level_range().start() != bounds.codec.level_range().end() {
        genes.push(Gene::Level);
    }
    let mut out = config.clone();
    let how_many = rng.gen_range(1..=3usize.min(genes.len()));
    genes.shuffle(rng);
    for gene in genes.into_iter().take(how_many) {
        match gene {
            Gene::TotalSize => {
                out.total_size = resample(rng, &bounds.total_size, out.total_size);
            }
            Gene::EntropyModulus => {
                let r = *bounds.entropy_modulus.start() as usize
                    ..=*bounds.entropy_modulus.end() as usize;
                out.entropy_modulus = resample(rng, &r, out.entropy_modulus as usize) as u16;
            }
            Gene::Repetitions => {
                out.guess_repetitions =
                    resample(rng, &bounds.guess_repetitions, out.guess_repetitions);
            }
            Gene::GuessOffset => {
                out.guess_offset = resample(rng, &(0..=out.total_size), out.guess_offset);
            }
            Gene::GuessStride => {
                let hi = out.total_size.max(bounds.guess_span_len);
                out.guess_stride = resample(rng, &(bounds.guess_span_len..=hi), out.guess_stride);
            }
            Gene::SecretOffset => {
                out.secret_offset = resample(rng, &(0..=out.total_size), out.secret_offset);
            }
            Gene::Level => {
                let r = bounds.codec.level_range();
                let r = *r.start() as usize..=*r.end() as usize;
                let lvl = resample(rng, &r, out.compression_level.value() as usize) as u32;
                out.compression_level =
                    CompressionLevel::for_codec(bounds.codec, lvl).expect("in range");
            }
            Gene::PrependLen => {
                out.prepend_compressible_len =
                    resample(rng, &(0..=bounds.prepend_max), out.prepend_compressible_len);
            }
            Gene::Seed => {
                out.seed = rng.gen::<u64>() & SEED_MASK;
            }
        }
    }
    repair(&mut out, bounds);
    if out == *config {
        // Repair can clamp a perturbation back to its old value; the seed is
        // never clamped, so bumping it keeps mutation non-identity.
        out.seed = out.seed.wrapping_add(1) & SEED_MASK;
    }
    out
}

fn resample(rng: &mut dyn RngCore, range: &RangeInclusive<usize>, old: usize) -> usize {
    if range.start() == range.end() {
        return *range.start();
    }
    for _ in 0..64 {
        let v = rng.gen_range(range.clone());
        if v != old {
            return v;
        }
    }
    old
}

/// Clamp and re-place genome fields so the span invariants hold again.
fn repair(config: &mut LayoutConfig, bounds: &LayoutBounds) {
    config.total_size = config
        .total_size
        .clamp(*bounds.total_size.start(), *bounds.total_size.end())
        .clamp(MIN_TOTAL_SIZE, MAX_TOTAL_SIZE);
    config.entropy_modulus = config
        .entropy_modulus
        .clamp(*bounds.entropy_modulus.start(), *bounds.entropy_modulus.end());
    config.guess_repetitions = config
        .guess_repetitions
        .clamp(*bounds.guess_repetitions.start().max(&1), *bounds.guess_repetitions.end());
    config.prepend_compressible_len = config.prepend_compressible_len.min(bounds.prepend_max);

    let gspan = bounds.guess_span_len;
    let sspan = bounds.secret_span_len;
    let total = config.total_size;
    config.guess_stride = config.guess_stride.max(gspan);
    // Shrink repetitions until the guess extent leaves room for the secret.
    loop {
        let extent = (config.guess_repetitions - 1) * config.guess_stride + gspan;
        if extent + sspan <= total {
            break;
        }
        if config.guess_repetitions > 1 {
            config.guess_repetitions -= 1;
        } else if config.guess_stride > gspan {
            config.guess_stride = gspan;
        } else {
            break;
        }
    }
    let extent = (config.guess_repetitions - 1) * config.guess_stride + gspan;
    config.guess_offset = config.guess_offset.min(total.saturating_sub(extent));

    match bounds.pin_secret_offset {
        Some(o) => {
            config.secret_offset = o;
            let s1 = o + sspan;
            let g0 = config.guess_offset;
            if g0 < s1 && o < g0 + extent {
                config.guess_offset = s1.min(total.saturating_sub(extent));
            }
        }
        None => {
            config.secret_offset = config.secret_offset.min(total.saturating_sub(sspan));
            let g0 = config.guess_offset;
            let g1 = g0 + extent;
            let s0 = config.secret_offset;
            let s1 = s0 + sspan;
            if s0 < g1 && g0 < s1 {
                // Move the secret into whichever side of the guess block has
                // room, preferring the front.
                if g0 >= sspan {
                    config.secret_offset = 0;
                } else if g1 + sspan <= total {
                    config.secret_offset = g1;
                } else {
                    while config.guess_repetitions > 1 {
                        config.guess_repetitions -= 1;
                        let e = (config.guess_repetitions - 1) * config.guess_stride + gspan;
                        if config.guess_offset + e + sspan <= total {
                            config.secret_offset = config.guess_offset + e;
                            break;
                        }
                    }
                    if config.guess_repetitions == 1 {
                        config.guess_offset = 0;
                        config.secret_offset = gspan.min(total - sspan);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basic_config() -> LayoutConfig {
        LayoutConfig {
            seed: 7,
            total_size: 4096,
            secret_offset: 1024,
            guess_offset: 2048,
            guess_repetitions: 2,
            guess_stride: 64,
            compression_level: CodecId::Deflate.default_level(),
            entropy_modulus: 256,
            prepend_compressible_len: 0,
            prefix: b"cookie=".to_vec(),
            filler: FillerKind::SeededRandom,
        }
    }

    #[test]
    fn degenerate_filler_is_constant() {
        let mut c = basic_config();
        c.entropy_modulus = 1;
        let built = build_layout(&c, b"SECRET", b"SECRET").unwrap();
        let spans: Vec<Range<usize>> = std::iter::once(built.secret_span.clone())
            .chain(built.guess_spans.iter().cloned())
            .collect();
        for (i, b) in built.bytes.iter().enumerate() {
            if spans.iter().any(|s| s.contains(&i)) {
                continue;
            }
            assert_eq!(*b, 0, "filler byte at {i}");
        }
        assert_eq!(&built.bytes[built.secret_span.clone()], b"cookie=SECRET");
        for span in &built.guess_spans {
            assert_eq!(&built.bytes[span.clone()], b"cookie=SECRET");
        }
    }

    #[test]
    fn build_is_deterministic() {
        let c = basic_config();
        let a = build_layout(&c, b"SECRET", b"GUESSX").unwrap();
        let b = build_layout(&c, b"SECRET", b"GUESSX").unwrap();
        assert_eq!(a.bytes, b.bytes);
        assert_eq!(a.secret_span, b.secret_span);
        assert_eq!(a.guess_spans, b.guess_spans);
    }

    #[test]
    fn guess_isolation() {
        let c = basic_config();
        let a = build_layout(&c, b"SECRET", b"AAAAAA").unwrap();
        let b = build_layout(&c, b"SECRET", b"BBBBBB").unwrap();
        assert_eq!(a.bytes.len(), b.bytes.len());
        for (i, (x, y)) in a.bytes.iter().zip(&b.bytes).enumerate() {
            let in_guess = a.guess_spans.iter().any(|s| s.contains(&i));
            if in_guess {
                continue;
            }
            assert_eq!(x, y, "non-guess byte {i} changed with the guess");
        }
    }

    #[test]
    fn short_guess_padded_to_identical_length() {
        let c = basic_config();
        let a = build_layout(&c, b"SECRET", b"SE").unwrap();
        let b = build_layout(&c, b"SECRET", b"SECRET").unwrap();
        assert_eq!(a.bytes.len(), b.bytes.len());
        assert_eq!(a.guess_spans, b.guess_spans);
        let a2 = build_layout(&c, b"SECRET", b"SE").unwrap();
        assert_eq!(a.bytes, a2.bytes);
    }

    #[test]
    fn overlap_is_a_config_error_naming_the_field() {
        let mut c = basic_config();
        c.secret_offset = 2048 + 4; // lands inside the first guess span
        let err = build_layout(&c, b"SECRET", b"SECRET").unwrap_err();
        match err {
            Error::Config { field, .. } => assert_eq!(field, "guess_offset"),
            other => panic!("unexpected error {other}"),
        }
        let mut c = basic_config();
        c.guess_offset = 4090;
        let err = build_layout(&c, b"SECRET", b"SECRET").unwrap_err();
        assert!(matches!(err, Error::Config { field: "guess_offset", .. }));
        let mut c = basic_config();
        c.guess_stride = 4; // < span, reps 2
        let err = build_layout(&c, b"SECRET", b"SECRET").unwrap_err();
        assert!(matches!(err, Error::Config { field: "guess_stride", .. }));
    }

    #[test]
    fn prepend_shifts_spans() {
        let mut c = basic_config();
        c.prepend_compressible_len = 512;
        let built = build_layout(&c, b"SECRET", b"SECRET").unwrap();
        assert_eq!(built.bytes.len(), 512 + 4096);
        assert!(built.bytes[..512].iter().all(|&b| b == PREPEND_BYTE));
        assert_eq!(built.secret_span.start, 512 + 1024);
    }

    #[test]
    fn cycle_filler_builds_counting_pattern() {
        let mut c = basic_config();
        c.filler = FillerKind::Cycle { period: 17 };
        let built = build_layout(&c, b"SECRET", b"SECRET").unwrap();
        assert_eq!(built.bytes[0], 0);
        assert_eq!(built.bytes[16], 16);
        assert_eq!(built.bytes[17], 0);
    }

    #[test]
    fn attack_payload_contains_only_guess_spans() {
        let c = basic_config();
        let span = c.guess_span_bytes(b"SECRET", 6).unwrap();
        let built = build_attack_payload(&c, &span).unwrap();
        assert_eq!(built.bytes.len(), c.total_size);
        assert_eq!(built.secret_span.len(), 0);
        assert_eq!(built.guess_spans.len(), 2);
        for s in &built.guess_spans {
            assert_eq!(&built.bytes[s.clone()], span.as_slice());
        }
    }

    #[test]
    fn shift_window_is_prefix_tail_plus_guess() {
        let c = basic_config();
        let w0 = c.shift_window_bytes(b"S").unwrap();
        assert_eq!(w0, b"cookie=S");
        let w2 = c.shift_window_bytes(b"SEC").unwrap();
        assert_eq!(w2, b"okie=SEC");
        assert_eq!(w2.len(), c.prefix.len() + 1);
    }

    #[test]
    fn random_configs_satisfy_invariants() {
        let bounds = LayoutBounds::new(CodecId::Deflate, b"cookie=".to_vec(), 6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let c = random_config(&mut rng, &bounds);
            c.validate_spans(bounds.secret_span_len, bounds.guess_span_len)
                .expect("random config invalid");
            assert_eq!(c.prefix, b"cookie=");
        }
    }

    #[test]
    fn random_config_total_size_spans_range() {
        // Chi-square uniformity sanity over 16 bins; the bound is the 0.9999
        // quantile for 15 degrees of freedom with margin on a fixed seed.
        let bounds = LayoutBounds::new(CodecId::Deflate, Vec::new(), 6);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut bins = [0usize; 16];
        let width = (MAX_TOTAL_SIZE - MIN_TOTAL_SIZE + 1) as f64 / 16.0;
        let n = 10_000;
        for _ in 0..n {
            let c = random_config(&mut rng, &bounds);
            let bin = (((c.total_size - MIN_TOTAL_SIZE) as f64) / width) as usize;
            bins[bin.min(15)] += 1;
        }
        let expected = n as f64 / 16.0;
        let chi2: f64 = bins
            .iter()
            .map(|&o| {
                let d = o as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 60.0, "chi2 {chi2} bins {bins:?}");
        assert!(bins.iter().all(|&b| b > 0));
    }

    #[test]
    fn random_config_reproducible() {
        let bounds = LayoutBounds::new(CodecId::Deflate, Vec::new(), 6);
        let a: Vec<LayoutConfig> = {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            (0..50).map(|_| random_config(&mut rng, &bounds)).collect()
        };
        let b: Vec<LayoutConfig> = {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            (0..50).map(|_| random_config(&mut rng, &bounds)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn mutation_closed_over_invariants() {
        let bounds = LayoutBounds::new(CodecId::Deflate, b"cookie=".to_vec(), 6);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut c = random_config(&mut rng, &bounds);
        for i in 0..10_000 {
            let m = mutate(&c, &mut rng, &bounds);
            m.validate_spans(bounds.secret_span_len, bounds.guess_span_len)
                .unwrap_or_else(|e| panic!("iteration {i}: {e}\n{m:?}"));
            assert_ne!(m, c, "mutation produced identity at iteration {i}");
            c = m;
        }
    }

    #[test]
    fn mutation_reaches_multiple_repetitions() {
        let bounds = LayoutBounds::new(CodecId::Deflate, Vec::new(), 6);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut c = random_config(&mut rng, &bounds);
        c.guess_repetitions = 1;
        for _ in 0..100 {
            c = mutate(&c, &mut rng, &bounds);
            if c.guess_repetitions > 1 {
                return;
            }
        }
        panic!("repetitions never exceeded 1 in 100 mutations");
    }

    #[test]
    fn pinned_secret_offset_respected() {
        let bounds =
            LayoutBounds::new(CodecId::Pglz, b"cookie=".to_vec(), 6).with_pinned_secret_offset(0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..500 {
            let c = random_config(&mut rng, &bounds);
            assert_eq!(c.secret_offset, 0);
            let m = mutate(&c, &mut rng, &bounds);
            assert_eq!(m.secret_offset, 0);
            m.validate_spans(bounds.secret_span_len, bounds.guess_span_len)
                .expect("mutated pinned config invalid");
        }
    }

    #[test]
    fn toml_roundtrip_keeps_exact_fields() {
        let c = basic_config();
        let text = c.to_toml();
        for key in [
            "seed",
            "total_size",
            "secret_offset",
            "guess_offset",
            "guess_repetitions",
            "guess_stride",
            "compression_level",
            "entropy_modulus",
            "prepend_compressible_len",
            "prefix",
        ] {
            assert!(text.contains(key), "missing key {key} in:\n{text}");
        }
        assert!(text.contains("prefix = \"cookie=\""));
        let back = LayoutConfig::from_toml(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn toml_roundtrip_nonprintable_prefix() {
        let mut c = basic_config();
        c.prefix = vec![0x00, 0xff, 0x41];
        let text = c.to_toml();
        let back = LayoutConfig::from_toml(&text).unwrap();
        assert_eq!(back.prefix, c.prefix);
    }
}
