//! Native history-table LZ codec compatible with PostgreSQL's internal
//! format (single-byte control blocks, 12-bit offsets, 4-bit lengths with an
//! extension byte for long matches).
//!
//! Two entry points exist on the compression side: [`compress`] always emits
//! a valid stream regardless of how poorly the input compresses, while
//! [`compress_with_strategy`] applies the engine-style bail-outs (minimum
//! input size, minimum compression rate, early give-up) and reports
//! non-acceptance as `None`. Storage-layer acceptance rules live elsewhere;
//! this module only implements the byte format and the match search.

use crate::error::{Error, Result};
use std::cell::RefCell;

const MAX_MATCH: usize = 273;
const MIN_MATCH: usize = 3;
const MAX_OFFSET: usize = 0x0fff; // 12-bit offsets, so history window is 4095 bytes
const HISTORY_SIZE: usize = 4096;
const MAX_HISTORY_LISTS: usize = 8192;

/// Tuning knobs of the match search and the built-in acceptance bail-outs.
#[derive(Debug, Clone, Copy)]
pub struct Strategy {
    /// Inputs shorter than this are not compressed at all.
    pub min_input_size: usize,
    /// Inputs longer than this are not compressed at all.
    pub max_input_size: usize,
    /// Required compression rate in percent of the input size that must be
    /// saved, otherwise compression is abandoned.
    pub min_comp_rate: u32,
    /// Give up if no match has been found within this many input bytes.
    pub first_success_by: usize,
    /// Stop the history search when a match of at least this size is found.
    pub match_size_good: usize,
    /// Percentage by which `match_size_good` is lowered on every deeper
    /// history probe.
    pub match_size_drop: u32,
}

/// The default strategy used for variable-length column data.
pub const DEFAULT_STRATEGY: Strategy = Strategy {
    min_input_size: 32,
    max_input_size: usize::MAX,
    min_comp_rate: 25,
    first_success_by: 1024,
    match_size_good: 128,
    match_size_drop: 10,
};

/// History table with recycled entries, kept as index-linked lists per hash
/// bucket. Entry 0 is the invalid sentinel.
struct History {
    start: Vec<u16>,
    next: Vec<u16>,
    prev: Vec<u16>,
    hindex: Vec<u16>,
    pos: Vec<u32>,
    hist_next: usize,
    recycle: bool,
    mask: usize,
}

impl History {
    fn new() -> Self {
        History {
            start: vec![0; MAX_HISTORY_LISTS],
            next: vec![0; HISTORY_SIZE + 1],
            prev: vec![0; HISTORY_SIZE + 1],
            hindex: vec![0; HISTORY_SIZE + 1],
            pos: vec![0; HISTORY_SIZE + 1],
            hist_next: 1,
            recycle: false,
            mask: 0,
        }
    }

    fn reset(&mut self, input_len: usize) {
        // Bucket count scales with the input so short inputs do not pay the
        // full table-clearing cost.
        let hashsz = if input_len < 128 {
            512
        } else if input_len < 256 {
            1024
        } else if input_len < 512 {
            2048
        } else if input_len < 1024 {
            4096
        } else {
            8192
        };
        self.mask = hashsz - 1;
        self.start[..hashsz].fill(0);
        self.hist_next = 1;
        self.recycle = false;
    }

    #[inline]
    fn hash(&self, src: &[u8], p: usize) -> usize {
        let rem = src.len() - p;
        let h = if rem < 4 {
            src[p] as usize
        } else {
            ((src[p] as usize) << 6)
                ^ ((src[p + 1] as usize) << 4)
                ^ ((src[p + 2] as usize) << 2)
                ^ (src[p + 3] as usize)
        };
        h & self.mask
    }

    #[inline]
    fn add(&mut self, src: &[u8], p: usize) {
        let hindex = self.hash(src, p);
        let me = self.hist_next;
        if self.recycle {
            // Unlink the entry we are about to overwrite from its old list.
            let old_prev = self.prev[me];
            let old_next = self.next[me];
            if old_prev == 0 {
                self.start[self.hindex[me] as usize] = old_next;
            } else {
                self.next[old_prev as usize] = old_next;
            }
            if old_next != 0 {
                self.prev[old_next as usize] = old_prev;
            }
        }
        let head = self.start[hindex];
        self.next[me] = head;
        self.prev[me] = 0;
        self.hindex[me] = hindex as u16;
        self.pos[me] = p as u32;
        if head != 0 {
            self.prev[head as usize] = me as u16;
        }
        self.start[hindex] = me as u16;
        self.hist_next += 1;
        if self.hist_next > HISTORY_SIZE {
            self.hist_next = 1;
            self.recycle = true;
        }
    }

    /// Walk the list for the 4-byte hash at `p` and return the best
    /// (length, offset) match, or None when nothing of MIN_MATCH length is
    /// in the window.
    fn find_match(
        &self,
        src: &[u8],
        p: usize,
        mut good_match: usize,
        good_drop: u32,
    ) -> Option<(usize, usize)> {
        let mut len = 0usize;
        let mut off = 0usize;
        let mut ent = self.start[self.hash(src, p)] as usize;
        while ent != 0 {
            let hp = self.pos[ent] as usize;
            let this_off = p - hp;
            if this_off > MAX_OFFSET {
                // Lists are most-recent-first, so all older entries are
                // farther away as well.
                break;
            }
            let max_len = (src.len() - p).min(MAX_MATCH);
            let mut this_len = 0usize;
            if len >= 16 {
                // Quick reject: a longer match must start with the current
                // best one.
                if len <= max_len && src[hp..hp + len] == src[p..p + len] {
                    this_len = len;
                    while this_len < max_len && src[hp + this_len] == src[p + this_len] {
                        this_len += 1;
                    }
                }
            } else {
                while this_len < max_len && src[hp + this_len] == src[p + this_len] {
                    this_len += 1;
                }
            }
            if this_len > len {
                len = this_len;
                off = this_off;
            }
            ent = self.next[ent] as usize;
            if ent != 0 {
                if len >= good_match {
                    break;
                }
                good_match -= (good_match * good_drop as usize) / 100;
            }
        }
        if len >= MIN_MATCH {
            Some((len, off))
        } else {
            None
        }
    }
}

thread_local! {
    static HISTORY: RefCell<History> = RefCell::new(History::new());
}

struct CtrlWriter {
    ctrl_pos: usize,
    ctrl_bits: u8,
    ctrl_mask: u16,
}

impl CtrlWriter {
    fn new(out: &mut Vec<u8>) -> Self {
        let ctrl_pos = out.len();
        out.push(0);
        CtrlWriter {
            ctrl_pos,
            ctrl_bits: 0,
            ctrl_mask: 1,
        }
    }

    #[inline]
    fn begin_item(&mut self, out: &mut Vec<u8>) {
        if self.ctrl_mask == 0x100 {
            out[self.ctrl_pos] = self.ctrl_bits;
            self.ctrl_pos = out.len();
            out.push(0);
            self.ctrl_bits = 0;
            self.ctrl_mask = 1;
        }
    }

    #[inline]
    fn literal(&mut self, out: &mut Vec<u8>, byte: u8) {
        self.begin_item(out);
        out.push(byte);
        self.ctrl_mask <<= 1;
    }

    #[inline]
    fn tag(&mut self, out: &mut Vec<u8>, len: usize, off: usize) {
        self.begin_item(out);
        self.ctrl_bits |= self.ctrl_mask as u8;
        if len > 17 {
            out.push((((off & 0xf00) >> 4) | 0x0f) as u8);
            out.push((off & 0xff) as u8);
            out.push((len - 18) as u8);
        } else {
            out.push((((off & 0xf00) >> 4) | (len - 3)) as u8);
            out.push((off & 0xff) as u8);
        }
        self.ctrl_mask <<= 1;
    }

    fn finish(&self, out: &mut Vec<u8>) {
        out[self.ctrl_pos] = self.ctrl_bits;
    }
}

fn compress_impl(src: &[u8], result_max: Option<usize>, first_success_by: Option<usize>,
                 good_match: usize, good_drop: u32) -> Option<Vec<u8>> {
    let mut out = Vec::with_capacity(src.len() + src.len() / 8 + 4);
    HISTORY.with(|h| {
        let mut hist = h.borrow_mut();
        hist.reset(src.len());
        let mut ctrl = CtrlWriter::new(&mut out);
        let mut p = 0usize;
        let mut found_match = false;
        while p < src.len() {
            if let Some(max) = result_max {
                if out.len() >= max {
                    return None;
                }
            }
            if let Some(by) = first_success_by {
                if !found_match && p >= by {
                    return None;
                }
            }
            if let Some((len, off)) = hist.find_match(src, p, good_match, good_drop) {
                ctrl.tag(&mut out, len, off);
                for _ in 0..len {
                    hist.add(src, p);
                    p += 1;
                }
                found_match = true;
            } else {
                ctrl.literal(&mut out, src[p]);
                hist.add(src, p);
                p += 1;
            }
        }
        ctrl.finish(&mut out);
        Some(out)
    })
}

/// Compress unconditionally: the stream is emitted even when it is larger
/// than the input. Callers that want engine-style acceptance semantics apply
/// their size rule to the returned length.
pub fn compress(src: &[u8]) -> Vec<u8> {
    compress_impl(
        src,
        None,
        None,
        DEFAULT_STRATEGY.match_size_good,
        DEFAULT_STRATEGY.match_size_drop,
    )
    .expect("unbounded compression cannot bail out")
}

/// Compress with the engine bail-outs; `None` means the input was not
/// acceptable under the strategy (too small, too large, or not compressible
/// enough).
pub fn compress_with_strategy(src: &[u8], strategy: &Strategy) -> Option<Vec<u8>> {
    if src.len() < strategy.min_input_size || src.len() > strategy.max_input_size {
        return None;
    }
    let need_rate = strategy.min_comp_rate.min(99);
    let result_max = (src.len() * (100 - need_rate as usize)) / 100;
    compress_impl(
        src,
        Some(result_max),
        Some(strategy.first_success_by),
        strategy.match_size_good,
        strategy.match_size_drop,
    )
}

/// Decompress `src` into a fresh buffer of exactly `raw_len` bytes.
pub fn decompress(src: &[u8], raw_len: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(raw_len);
    decompress_into(src, raw_len, &mut out)?;
    Ok(out)
}

/// Decompress `src` into `out` (cleared first). The output length must be
/// known up front; the stream carries no length header of its own.
pub fn decompress_into(src: &[u8], raw_len: usize, out: &mut Vec<u8>) -> Result<()> {
    out.clear();
    out.resize(raw_len, 0);
    let dst = out.as_mut_slice();
    let corrupt = |reason: &str| Error::Integrity {
        codec: "pglz",
        reason: reason.to_string(),
    };
    let mut sp = 0usize;
    let mut dp = 0usize;
    while sp < src.len() && dp < raw_len {
        let mut ctrl = src[sp];
        sp += 1;
        let mut ctrlc = 0;
        while ctrlc < 8 && sp < src.len() && dp < raw_len {
            if ctrl & 1 != 0 {
                if sp + 1 >= src.len() {
                    return Err(corrupt("truncated tag"));
                }
                let mut len = ((src[sp] & 0x0f) as usize) + 3;
                let off = (((src[sp] & 0xf0) as usize) << 4) | (src[sp + 1] as usize);
                sp += 2;
                if len == 18 {
                    if sp >= src.len() {
                        return Err(corrupt("truncated long tag"));
                    }
                    len += src[sp] as usize;
                    sp += 1;
                }
                if off == 0 || off > dp {
                    return Err(corrupt("tag offset outside produced output"));
                }
                if dp + len > raw_len {
                    return Err(corrupt("tag overruns declared output length"));
                }
                // Offsets smaller than the length replicate runs. Doubling
                // block copies keep that semantics while staying at memcpy
                // speed: each round copies an already-produced, now
                // non-overlapping prefix.
                let mut off = off;
                while off < len {
                    dst.copy_within(dp - off..dp, dp);
                    dp += off;
                    len -= off;
                    off += off;
                }
                dst.copy_within(dp - off..dp - off + len, dp);
                dp += len;
            } else {
                dst[dp] = src[sp];
                dp += 1;
                sp += 1;
            }
            ctrl >>= 1;
            ctrlc += 1;
        }
    }
    if dp != raw_len || sp != src.len() {
        return Err(corrupt("stream length mismatch"));
    }
    Ok(())
}
