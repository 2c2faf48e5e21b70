//! Count-based Markov model over delayed frames.
//!
//! The context of a position is the last `order` delayed frames before it,
//! with an all-BOS frame standing in for anything before the first frame.
//! Counts are kept for every context length `0..=order`; queries back off to
//! shorter contexts when the full one was never observed.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use super::generate::{ConditionalModel, DecodeContext, ModelError};
use crate::types::{DelayedGrid, SpecialIds};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarkovError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("grid {index} differs from the first grid in {field}")]
    InconsistentCorpus { index: usize, field: &'static str },
    #[error("smoothing must be finite and >= 0, got {0}")]
    BadSmoothing(f64),
}

type Key = (usize, Vec<u32>);

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovModel {
    order: usize,
    streams: usize,
    delay: usize,
    vocab: u32,
    specials: SpecialIds,
    smoothing: f64,
    counts: HashMap<Key, BTreeMap<u32, u64>>,
}

/// Flattened last `len` frames of `history`, left-padded with BOS frames.
fn context_key(history: &[Vec<u32>], len: usize, streams: usize, bos: u32) -> Vec<u32> {
    let mut key = Vec::with_capacity(len * streams);
    let have = history.len().min(len);
    key.extend(std::iter::repeat_n(bos, (len - have) * streams));
    for f in &history[history.len() - have..] {
        key.extend_from_slice(f);
    }
    key
}

pub fn markov_fit(corpus: &[DelayedGrid], order: usize, smoothing: f64) -> Result<MarkovModel, MarkovError> {
    let first = corpus.first().ok_or(MarkovError::EmptyCorpus)?;
    if !(smoothing.is_finite() && smoothing >= 0.0) {
        return Err(MarkovError::BadSmoothing(smoothing));
    }
    for (index, g) in corpus.iter().enumerate().skip(1) {
        let field = if g.streams() != first.streams() {
            "stream count"
        } else if g.delay() != first.delay() {
            "delay"
        } else if g.vocab_size() != first.vocab_size() {
            "vocabulary"
        } else if g.specials() != first.specials() {
            "special ids"
        } else {
            continue;
        };
        return Err(MarkovError::InconsistentCorpus { index, field });
    }
    let mut model = MarkovModel {
        order,
        streams: first.streams(),
        delay: first.delay(),
        vocab: first.vocab_size(),
        specials: first.specials(),
        smoothing,
        counts: HashMap::new(),
    };
    for g in corpus {
        let m = g.streams();
        let bos = g.specials().bos;
        let mut history: Vec<Vec<u32>> = vec![vec![bos; m]];
        for f in 0..g.frames() {
            if f == g.content_frames() {
                model.observe(&history, 0, g.specials().eos);
            }
            for j in 0..m {
                if g.is_token_slot(f, j) {
                    model.observe(&history, j, g.get(f, j));
                }
            }
            history.push(g.frame(f).to_vec());
        }
        if g.content_frames() == g.frames() {
            model.observe(&history, 0, g.specials().eos);
        }
    }
    Ok(model)
}

impl MarkovModel {
    fn observe(&mut self, history: &[Vec<u32>], stream: usize, id: u32) {
        for len in 0..=self.order {
            let key = context_key(history, len, self.streams, self.specials.bos);
            *self.counts.entry((stream, key)).or_default().entry(id).or_insert(0) += 1;
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn streams(&self) -> usize {
        self.streams
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    pub fn vocab(&self) -> u32 {
        self.vocab
    }

    pub fn specials(&self) -> SpecialIds {
        self.specials
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    /// Raw counts for `stream` after the given context frames (exactly
    /// `context.len()` frames, each `streams` wide).
    pub fn raw_counts(&self, stream: usize, context: &[Vec<u32>]) -> Option<&BTreeMap<u32, u64>> {
        let key = context_key(context, context.len(), self.streams, self.specials.bos);
        self.counts.get(&(stream, key))
    }

    /// Every stored count as `(stream, context, id, count)`, sorted.
    pub fn entries(&self) -> Vec<(usize, &[u32], u32, u64)> {
        let mut out: Vec<_> = self
            .counts
            .iter()
            .flat_map(|((s, ctx), ids)| ids.iter().map(move |(&id, &c)| (*s, ctx.as_slice(), id, c)))
            .collect();
        out.sort();
        out
    }

    /// Rebuilds a model from stored counts; the inverse of [`Self::entries`].
    pub fn from_entries<I>(order: usize, streams: usize, delay: usize, vocab: u32, smoothing: f64, entries: I) -> Result<Self, String>
    where
        I: IntoIterator<Item = (usize, Vec<u32>, u32, u64)>,
    {
        let specials = SpecialIds::for_vocab(vocab).map_err(|e| e.to_string())?;
        let mut counts: HashMap<Key, BTreeMap<u32, u64>> = HashMap::new();
        for (stream, ctx, id, c) in entries {
            if stream >= streams || ctx.len() % streams != 0 || ctx.len() / streams > order {
                return Err(format!("entry for stream {stream} with context length {} does not fit the model", ctx.len()));
            }
            if id >= vocab && id != specials.eos {
                return Err(format!("count for id {id} outside vocabulary {vocab}"));
            }
            *counts.entry((stream, ctx)).or_default().entry(id).or_insert(0) += c;
        }
        Ok(Self {
            order,
            streams,
            delay,
            vocab,
            specials,
            smoothing,
            counts,
        })
    }

    /// Counts for the longest observed context ending at `history`.
    fn backoff(&self, history: &[Vec<u32>], stream: usize) -> Option<&BTreeMap<u32, u64>> {
        (0..=self.order).rev().find_map(|len| {
            let key = context_key(history, len, self.streams, self.specials.bos);
            self.counts.get(&(stream, key))
        })
    }

    /// Smoothed distribution over ids `0..vocab + 3` (indexed by id). Real
    /// tokens and EOS get `(count + a) / (total + a * (vocab + 1))`; pad and
    /// BOS get 0. An unseen stream with zero smoothing falls back to uniform.
    pub fn probabilities(&self, history: &[Vec<u32>], stream: usize) -> Vec<f64> {
        let n = self.vocab as usize + 3;
        let legal = self.vocab as f64 + 1.0;
        let mut probs = vec![0.0; n];
        let counts = self.backoff(history, stream);
        let total = counts.map_or(0, |c| c.values().sum::<u64>()) as f64;
        let a = self.smoothing;
        let denom = total + a * legal;
        if denom <= 0.0 {
            probs[..self.vocab as usize].fill(1.0 / legal);
            probs[self.specials.eos as usize] = 1.0 / legal;
            return probs;
        }
        probs[..self.vocab as usize].fill(a / denom);
        probs[self.specials.eos as usize] = a / denom;
        if let Some(c) = counts {
            for (&id, &k) in c {
                probs[id as usize] += k as f64 / denom;
            }
        }
        probs
    }
}

impl ConditionalModel for MarkovModel {
    fn vocab_size(&self) -> u32 {
        self.vocab
    }

    /// Log-probabilities; impossible ids score `-inf`.
    fn scores(&self, ctx: &DecodeContext<'_>, stream: usize) -> Result<Vec<f64>, ModelError> {
        if stream >= self.streams {
            return Err(ModelError(format!("stream {stream} outside model with {} streams", self.streams)));
        }
        Ok(self.probabilities(ctx.history, stream).into_iter().map(f64::ln).collect())
    }
}
