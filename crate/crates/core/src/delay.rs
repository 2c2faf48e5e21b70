//! Delayed multi-stream layout.
//!
//! Stream `j` (0-indexed) is shifted right by `d * j` frames, so one
//! autoregressive pass over delayed frames emits every stream while lower
//! streams lead higher ones:
//!
//! ```text
//!   d = 1, m = 3, T = 4
//!        f: 0  1  2  3  4  5
//!   stream0 a1 a2 a3 a4 P  P
//!   stream1 P  b1 b2 b3 b4 P
//!   stream2 P  P  c1 c2 c3 c4
//! ```

use crate::types::{DelayedGrid, SpecialIds, TokenGrid};

/// Shifts stream `j` of `g` by `d * j` frames, padding with `pad`.
pub fn apply_delay(g: &TokenGrid, d: usize) -> DelayedGrid {
    let specials = SpecialIds::for_vocab(g.vocab_size()).expect("token grid vocab leaves room for specials");
    let m = g.streams();
    let frames = g.frames() + d * (m - 1);
    let mut ids = vec![specials.pad; frames * m];
    for t in 0..g.frames() {
        for j in 0..m {
            ids[(t + d * j) * m + j] = g.get(t, j);
        }
    }
    DelayedGrid::from_parts(frames, m, g.vocab_size(), d, specials, ids).expect("shifted layout is valid by construction")
}

/// Exact inverse of [`apply_delay`]. Layout violations are rejected when the
/// [`DelayedGrid`] is built, so this cannot fail.
pub fn remove_delay(dg: &DelayedGrid) -> TokenGrid {
    let (m, d, t_len) = (dg.streams(), dg.delay(), dg.content_frames());
    let mut ids = Vec::with_capacity(t_len * m);
    for t in 0..t_len {
        for j in 0..m {
            ids.push(dg.get(t + d * j, j));
        }
    }
    TokenGrid::new(t_len, m, dg.vocab_size(), ids).expect("token slots hold in-vocabulary ids")
}

/// Last frame of stream `k` visible when predicting `y[t, j]`, all 1-indexed:
/// `t - 1 + d * (j - k)`, clamped at 0 (nothing visible). Frame `f` of stream
/// `k` is in the conditioning set iff `f <= visible(..)`.
pub fn visible(t: usize, j: usize, k: usize, d: usize, m: usize) -> usize {
    debug_assert!(t >= 1 && (1..=m).contains(&j) && (1..=m).contains(&k));
    let bound = (t as i64) - 1 + (d as i64) * (j as i64 - k as i64);
    bound.max(0) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Bos,
    /// Real token of content frame `t` and stream `j` (both 0-indexed).
    Token { t: usize, j: usize },
    Pad,
    Eos,
}

/// Per-position classification of a delayed grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameLayout {
    pub frames: usize,
    pub streams: usize,
    pub slots: Vec<Slot>,
}

impl FrameLayout {
    pub fn slot(&self, frame: usize, stream: usize) -> Slot {
        self.slots[frame * self.streams + stream]
    }
}

/// Classifies every slot. With `framed`, one all-BOS frame is prepended and
/// one all-EOS frame appended.
pub fn frame_layout(dg: &DelayedGrid, framed: bool) -> FrameLayout {
    let (m, d) = (dg.streams(), dg.delay());
    let extra = if framed { 2 } else { 0 };
    let frames = dg.frames() + extra;
    let mut slots = Vec::with_capacity(frames * m);
    if framed {
        slots.extend(std::iter::repeat_n(Slot::Bos, m));
    }
    for f in 0..dg.frames() {
        for j in 0..m {
            slots.push(if dg.is_token_slot(f, j) {
                Slot::Token { t: f - d * j, j }
            } else {
                Slot::Pad
            });
        }
    }
    if framed {
        slots.extend(std::iter::repeat_n(Slot::Eos, m));
    }
    FrameLayout {
        frames,
        streams: m,
        slots,
    }
}
