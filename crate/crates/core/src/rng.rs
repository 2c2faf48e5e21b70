//! Seeded random number generation.
//!
//! Every random draw in the crate goes through [`SeededRng`], a thin owner of
//! a ChaCha8 stream cipher generator seeded from a single `u64`. ChaCha8 output
//! is specified independently of platform and word size, so equal seeds give
//! equal draw sequences everywhere. Integer draws use 64-bit arithmetic only.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::types::CoreError;

#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `[lo, hi]`, inclusive on both ends.
    pub fn uniform_int(&mut self, lo: u64, hi: u64) -> Result<u64, CoreError> {
        if lo > hi {
            return Err(CoreError::InvalidRange { lo, hi });
        }
        Ok(self.inner.gen_range(lo..=hi))
    }

    /// Uniform index in `[0, n)`. Panics if `n == 0`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range is empty");
        self.inner.gen_range(0..n as u64) as usize
    }

    /// Uniform real in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform real in `[lo, hi]`.
    pub fn uniform_real(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Fisher-Yates shuffle driven by [`Self::index`].
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}
