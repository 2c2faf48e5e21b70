//! Sampling stack and delayed autoregressive decoding.
//!
//! Per position the pipeline is fixed: repetition penalty on logits, then
//! temperature, softmax, top-k, top-p, and a categorical draw.

mod generate;
mod markov;

pub use generate::{generate, ConditionalModel, DecodeContext, GenError, Generation, ModelError, StopReason};
pub use markov::{markov_fit, MarkovError, MarkovModel};

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplingError {
    #[error("temperature must be > 0, got {0}")]
    NonPositiveTemperature(f64),
    #[error("top_p must be in (0, 1], got {0}")]
    InvalidTopP(f64),
    #[error("top_k must be >= 1")]
    InvalidTopK,
    #[error("repetition penalty must be >= 1, got {0}")]
    InvalidPenalty(f64),
    #[error("distribution has no probability mass")]
    DegenerateDistribution,
}

/// Which previously emitted ids the repetition penalty looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PenaltyScope {
    /// Only ids emitted earlier on the same stream.
    #[default]
    PerStream,
    /// Ids emitted on any stream.
    Union,
}

impl FromStr for PenaltyScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-stream" | "per_stream" => Ok(PenaltyScope::PerStream),
            "union" => Ok(PenaltyScope::Union),
            other => Err(format!("unknown penalty scope '{other}' (per-stream or union)")),
        }
    }
}

impl fmt::Display for PenaltyScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PenaltyScope::PerStream => "per-stream",
            PenaltyScope::Union => "union",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: usize,
    pub repetition_penalty: f64,
    pub seed: u64,
    pub penalty_scope: PenaltyScope,
    /// Treat an immediate EOS as an error instead of returning an empty grid.
    pub strict: bool,
}

impl Default for SamplingConfig {
    /// Temperature 0.8, top-p 0.8, top-k 10, repetition penalty 2.0.
    fn default() -> Self {
        Self {
            temperature: 0.8,
            top_p: 0.8,
            top_k: 10,
            repetition_penalty: 2.0,
            seed: 0,
            penalty_scope: PenaltyScope::PerStream,
            strict: false,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), SamplingError> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(SamplingError::NonPositiveTemperature(self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(SamplingError::InvalidTopP(self.top_p));
        }
        if self.top_k == 0 {
            return Err(SamplingError::InvalidTopK);
        }
        if !(self.repetition_penalty >= 1.0 && self.repetition_penalty.is_finite()) {
            return Err(SamplingError::InvalidPenalty(self.repetition_penalty));
        }
        Ok(())
    }
}

pub fn apply_temperature(logits: &[f64], temperature: f64) -> Result<Vec<f64>, SamplingError> {
    if !(temperature > 0.0) {
        return Err(SamplingError::NonPositiveTemperature(temperature));
    }
    Ok(logits.iter().map(|l| l / temperature).collect())
}

/// CTRL-style penalty: positive logits of seen ids are divided by `penalty`,
/// non-positive ones multiplied.
pub fn apply_repetition_penalty(logits: &[f64], history: &HashSet<u32>, penalty: f64) -> Vec<f64> {
    let mut out = logits.to_vec();
    for &id in history {
        if let Some(l) = out.get_mut(id as usize) {
            *l = if *l > 0.0 { *l / penalty } else { *l * penalty };
        }
    }
    out
}

/// Softmax with max subtraction. `-inf` logits get probability 0; if every
/// logit is `-inf` the result is all zeros.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![0.0; logits.len()];
    }
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Indices sorted by descending probability, lowest index first on ties.
fn ranked(probs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx
}

fn keep_and_renormalize(probs: &[f64], keep: &[usize]) -> Vec<f64> {
    let mass: f64 = keep.iter().map(|&i| probs[i]).sum();
    let mut out = vec![0.0; probs.len()];
    if mass > 0.0 {
        for &i in keep {
            out[i] = probs[i] / mass;
        }
    }
    out
}

/// Keeps the `k` most probable entries and renormalizes.
pub fn top_k_filter(probs: &[f64], k: usize) -> Vec<f64> {
    if k >= probs.len() {
        return probs.to_vec();
    }
    let order = ranked(probs);
    keep_and_renormalize(probs, &order[..k])
}

/// Number of entries top-p keeps: the shortest probability-sorted prefix
/// whose mass reaches `p`.
pub fn top_p_support(probs: &[f64], p: f64) -> usize {
    let order = ranked(probs);
    let mut cum = 0.0;
    for (n, &i) in order.iter().enumerate() {
        cum += probs[i];
        if cum >= p {
            return n + 1;
        }
    }
    order.len()
}

/// Keeps the minimal probability-sorted prefix with mass `>= p` and
/// renormalizes.
pub fn top_p_filter(probs: &[f64], p: f64) -> Vec<f64> {
    if p >= 1.0 {
        return probs.to_vec();
    }
    let order = ranked(probs);
    let n = top_p_support(probs, p);
    keep_and_renormalize(probs, &order[..n])
}

/// Categorical draw. Mass need not be exactly 1; it is rescaled.
pub fn sample(probs: &[f64], rng: &mut SeededRng) -> Result<usize, SamplingError> {
    let total: f64 = probs.iter().filter(|p| **p > 0.0).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(SamplingError::DegenerateDistribution);
    }
    let u = rng.unit() * total;
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            cum += p;
            last = i;
            if u < cum {
                return Ok(i);
            }
        }
    }
    Ok(last)
}

/// Full pipeline for one position.
pub fn sample_next(
    logits: &[f64],
    history: &HashSet<u32>,
    cfg: &SamplingConfig,
    rng: &mut SeededRng,
) -> Result<usize, SamplingError> {
    let penalized = apply_repetition_penalty(logits, history, cfg.repetition_penalty);
    let scaled = apply_temperature(&penalized, cfg.temperature)?;
    let probs = softmax(&scaled);
    let probs = top_k_filter(&probs, cfg.top_k);
    let probs = top_p_filter(&probs, cfg.top_p);
    sample(&probs, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn reference_defaults() {
        let c = SamplingConfig::default();
        assert_eq!((c.temperature, c.top_p, c.top_k, c.repetition_penalty), (0.8, 0.8, 10, 2.0));
        assert!(c.validate().is_ok());
    }

    #[test]
    fn config_validation() {
        let bad = [
            SamplingConfig {
                temperature: 0.0,
                ..Default::default()
            },
            SamplingConfig {
                top_p: 0.0,
                ..Default::default()
            },
            SamplingConfig {
                top_p: 1.5,
                ..Default::default()
            },
            SamplingConfig {
                top_k: 0,
                ..Default::default()
            },
            SamplingConfig {
                repetition_penalty: 0.5,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn temperature_examples() {
        assert_eq!(apply_temperature(&[1.0, -2.0], 1.0).unwrap(), vec![1.0, -2.0]);
        let scaled = apply_temperature(&[3.0, 3.0, 3.0], 0.3).unwrap();
        assert!(scaled.iter().all(|v| *v == scaled[0]));
        assert_eq!(apply_temperature(&[2.0, 0.0], 0.5).unwrap(), vec![4.0, 0.0]);
        assert_eq!(
            apply_temperature(&[1.0], 0.0),
            Err(SamplingError::NonPositiveTemperature(0.0))
        );
        assert!(apply_temperature(&[1.0], -1.0).is_err());
    }

    #[test]
    fn penalty_examples() {
        let hist: HashSet<u32> = [0, 1].into_iter().collect();
        let logits = [4.0, -1.0, 3.0];
        assert_eq!(apply_repetition_penalty(&logits, &hist, 1.0), logits.to_vec());
        assert_eq!(apply_repetition_penalty(&logits, &hist, 2.0), vec![2.0, -2.0, 3.0]);
    }

    #[test]
    fn top_k_examples() {
        let p = [0.5, 0.3, 0.2];
        assert_eq!(top_k_filter(&p, 3), p.to_vec());
        assert_eq!(top_k_filter(&p, 10), p.to_vec());
        assert!(close(&top_k_filter(&p, 2), &[0.625, 0.375, 0.0]));
        // ties broken by lowest index
        assert!(close(&top_k_filter(&[0.25; 4], 1), &[1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn top_p_examples() {
        let p = [0.6, 0.3, 0.1];
        assert_eq!(top_p_filter(&p, 1.0), p.to_vec());
        assert!(close(&top_p_filter(&p, 0.8), &[2.0 / 3.0, 1.0 / 3.0, 0.0]));
        assert!(close(&top_p_filter(&p, 0.6), &[1.0, 0.0, 0.0]));
        assert!(close(&top_p_filter(&[0.1, 0.3, 0.6], 0.8), &[0.0, 1.0 / 3.0, 2.0 / 3.0]));
    }

    #[test]
    fn sample_one_hot_and_degenerate() {
        let mut rng = SeededRng::new(0);
        for _ in 0..100 {
            assert_eq!(sample(&[0.0, 0.0, 1.0, 0.0], &mut rng).unwrap(), 2);
        }
        assert_eq!(sample(&[0.0, 0.0], &mut rng), Err(SamplingError::DegenerateDistribution));
    }

    #[test]
    fn sample_is_seed_deterministic() {
        let p = [0.1, 0.2, 0.3, 0.4];
        let a: Vec<usize> = {
            let mut r = SeededRng::new(9);
            (0..50).map(|_| sample(&p, &mut r).unwrap()).collect()
        };
        let b: Vec<usize> = {
            let mut r = SeededRng::new(9);
            (0..50).map(|_| sample(&p, &mut r).unwrap()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn sample_frequencies_binomial() {
        // 100,000 draws from [0.7, 0.3]: sigma = sqrt(n p q) ~ 144.9
        let mut rng = SeededRng::new(123);
        let n = 100_000;
        let ones = (0..n).filter(|_| sample(&[0.7, 0.3], &mut rng).unwrap() == 1).count();
        let sigma = (n as f64 * 0.7 * 0.3).sqrt();
        assert!((ones as f64 - 30_000.0).abs() <= 3.0 * sigma, "{ones}");
    }

    #[test]
    fn softmax_masks_neg_inf() {
        let p = softmax(&[0.0, f64::NEG_INFINITY, 0.0]);
        assert!(close(&p, &[0.5, 0.0, 0.5]));
        assert_eq!(softmax(&[f64::NEG_INFINITY; 2]), vec![0.0, 0.0]);
    }
}
