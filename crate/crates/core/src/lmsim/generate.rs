//! Delayed autoregressive generation.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use super::{sample_next, PenaltyScope, SamplingConfig, SamplingError};
use crate::delay::remove_delay;
use crate::rng::SeededRng;
use crate::types::{CoreError, DelayedGrid, SpecialIds, TokenGrid};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("model failure: {0}")]
pub struct ModelError(pub String);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenError {
    #[error(transparent)]
    ModelFailure(#[from] ModelError),
    #[error("model returned {got} scores, expected {expected}")]
    BadScoreLength { got: usize, expected: usize },
    #[error("model returned a NaN or +inf score for id {id}")]
    BadScore { id: usize },
    #[error("model emitted EOS before any content")]
    NoProgress,
    #[error("max_frames must be >= 1")]
    ZeroMaxFrames,
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// What a model sees when scoring stream `j` of the current delayed frame.
#[derive(Debug, Clone, Copy)]
pub struct DecodeContext<'a> {
    /// Completed delayed frames, starting with one all-BOS frame.
    pub history: &'a [Vec<u32>],
    /// Streams `0..j` of the frame being generated.
    pub current: &'a [u32],
}

/// A next-token scorer over one stream's vocabulary plus special ids.
///
/// `scores` returns one value per id in `0..vocab_size() + 3` (real tokens,
/// then pad, BOS, EOS). Scores act as logits; `-inf` marks an impossible id,
/// NaN and `+inf` are rejected.
pub trait ConditionalModel {
    fn vocab_size(&self) -> u32;
    fn scores(&self, ctx: &DecodeContext<'_>, stream: usize) -> Result<Vec<f64>, ModelError>;
}

impl<M: ConditionalModel + ?Sized> ConditionalModel for &M {
    fn vocab_size(&self) -> u32 {
        (**self).vocab_size()
    }

    fn scores(&self, ctx: &DecodeContext<'_>, stream: usize) -> Result<Vec<f64>, ModelError> {
        (**self).scores(ctx, stream)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Eos,
    MaxFrames,
    /// EOS at the very first position; the grids are empty.
    NoProgress,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Eos => "eos",
            StopReason::MaxFrames => "max_frames",
            StopReason::NoProgress => "no_progress",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub delayed: DelayedGrid,
    pub grid: TokenGrid,
    pub stop: StopReason,
}

impl Generation {
    /// Content frames emitted.
    pub fn frames_emitted(&self) -> usize {
        self.grid.frames()
    }
}

/// Generates one delayed frame at a time, streams in order `0..m` within a
/// frame. Slots the delay layout marks as padding are filled without querying
/// the model. Only stream 0 may emit EOS; its EOS (or reaching `max_frames`
/// content frames) fixes the content length, after which the higher streams
/// finish their delayed tail.
pub fn generate<M: ConditionalModel>(
    model: &M,
    cfg: &SamplingConfig,
    streams: usize,
    delay: usize,
    max_frames: usize,
) -> Result<Generation, GenError> {
    cfg.validate()?;
    if max_frames == 0 {
        return Err(GenError::ZeroMaxFrames);
    }
    if streams == 0 {
        return Err(CoreError::NoStreams.into());
    }
    let vocab = model.vocab_size();
    let sp = SpecialIds::for_vocab(vocab)?;
    let n_scores = vocab as usize + 3;
    let mut rng = SeededRng::new(cfg.seed);
    let mut history: Vec<Vec<u32>> = vec![vec![sp.bos; streams]];
    let mut seen: Vec<HashSet<u32>> = vec![HashSet::new(); streams];
    let mut content: Option<usize> = None;
    let mut stop = StopReason::Eos;
    let span = delay * (streams - 1);

    // 1-indexed delayed frame f holds content frame t = f - d*j on stream j
    let mut f = 1usize;
    loop {
        let mut frame = Vec::with_capacity(streams);
        for j in 0..streams {
            let lead = delay * j;
            let real = f > lead && content.is_none_or(|n| f - lead <= n);
            if !real {
                frame.push(sp.pad);
                continue;
            }
            if j == 0 && f - 1 == max_frames {
                content = Some(max_frames);
                stop = StopReason::MaxFrames;
                frame.push(sp.pad);
                continue;
            }
            let ctx = DecodeContext {
                history: &history,
                current: &frame,
            };
            let mut logits = model.scores(&ctx, j)?;
            if logits.len() != n_scores {
                return Err(GenError::BadScoreLength {
                    got: logits.len(),
                    expected: n_scores,
                });
            }
            if let Some(id) = logits.iter().position(|l| l.is_nan() || *l == f64::INFINITY) {
                return Err(GenError::BadScore { id });
            }
            logits[sp.pad as usize] = f64::NEG_INFINITY;
            logits[sp.bos as usize] = f64::NEG_INFINITY;
            if j > 0 {
                logits[sp.eos as usize] = f64::NEG_INFINITY;
            }
            let union;
            let history_ids = match cfg.penalty_scope {
                PenaltyScope::PerStream => &seen[j],
                PenaltyScope::Union => {
                    union = seen.iter().flatten().copied().collect::<HashSet<u32>>();
                    &union
                }
            };
            let id = sample_next(&logits, history_ids, cfg, &mut rng)? as u32;
            if id == sp.eos {
                content = Some(f - 1);
                stop = StopReason::Eos;
                frame.push(sp.pad);
            } else {
                seen[j].insert(id);
                frame.push(id);
            }
        }
        let total = content.map(|n| n + span);
        if total.is_some_and(|total| f > total) {
            break;
        }
        history.push(frame);
        if total.is_some_and(|total| f >= total) {
            break;
        }
        f += 1;
    }

    let t_len = content.expect("loop exits only once the content length is known");
    if t_len == 0 {
        if cfg.strict {
            return Err(GenError::NoProgress);
        }
        stop = StopReason::NoProgress;
    }
    let frames: Vec<u32> = history[1..].concat();
    let delayed = DelayedGrid::from_parts(t_len + span, streams, vocab, delay, sp, frames)?;
    let grid = remove_delay(&delayed);
    Ok(Generation { delayed, grid, stop })
}
