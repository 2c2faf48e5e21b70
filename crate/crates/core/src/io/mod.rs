//! Binary artifact formats, run configuration, and synthetic data.
//!
//! All three binary formats share a 4-byte ASCII magic and a `u32` version,
//! followed by a fixed little-endian header and a row-major payload:
//!
//! | format | magic  | payload                                           |
//! |--------|--------|---------------------------------------------------|
//! | features  | `SOFM` | `rows x cols` f32                              |
//! | codebooks | `SOCB` | per codebook: codewords, usage counts, sums (f32) |
//! | grids     | `SOTG` | `frames x streams` u32 ids                     |

mod config;
mod formats;
mod markov_csv;
mod synth;

pub use config::{parse_config, read_config, ConfigError, RunConfig};
pub use formats::{
    codebooks_from_bytes, codebooks_to_bytes, features_from_bytes, features_to_bytes, grid_from_bytes, grid_to_bytes,
    read_codebooks, read_features, read_grid, write_codebooks, write_features, write_grid, FormatError, GridFile,
    FORMAT_VERSION,
};
pub use markov_csv::{load_markov, read_markov, save_markov, write_markov};
pub use synth::{cluster_means, synth_features, SynthError, SynthSpec};
