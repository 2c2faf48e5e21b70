//! Ordered product quantization toolkit.
//!
//! The crate is organised around a handful of building blocks:
//!
//! - [`types`] and [`rng`]: feature matrices, token grids, and the seeded
//!   generator every random draw goes through.
//! - [`quantizer`]: product (PQ), residual (RQ) and ordered product (OPQ)
//!   quantization with EMA codebook training and stream-wise nested dropout.
//! - [`ordering`]: prefix-reconstruction analysis, distortion metrics, the
//!   weighted codec loss, and the clip-and-shuffle transform.
//! - [`delay`]: the delayed multi-stream layout and its visibility predicate.
//! - [`lmsim`]: the sampling stack, a count-based Markov reference model, and
//!   delayed autoregressive generation over any [`lmsim::ConditionalModel`].
//! - [`io`] and [`cli`]: binary file formats, `key = value` configuration,
//!   synthetic data, and the batch command line.

pub mod cli;
pub mod delay;
pub mod io;
pub mod lmsim;
pub mod ordering;
pub mod quantizer;
pub mod rng;
pub mod types;

pub use rng::SeededRng;
pub use types::{CoreError, DelayedGrid, FeatureMatrix, SpecialIds, TokenGrid};
