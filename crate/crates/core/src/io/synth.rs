use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::rng::SeededRng;
use crate::types::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("bad synth spec: {0}")]
    BadSpec(String),
}

/// Synthetic feature distributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SynthSpec {
    /// `x_i = z_i * i^(-exponent/2)` for `i = 1..=dim`, `z ~ N(0, I)`: axis
    /// aligned with covariance eigenvalues `i^-exponent`.
    AnisotropicGaussian { dim: usize, exponent: f64 },
    /// `k` means drawn uniformly in `[-1, 1]^dim`, redrawn until every pair is
    /// at least 0.5 apart; row `r` belongs to cluster `r mod k` and is its
    /// mean plus `spread * N(0, I)`.
    Clusters { k: usize, dim: usize, spread: f64 },
    /// Independent AR(1) sequence per column over rows:
    /// `x_t = coef * x_{t-1} + sqrt(1 - coef^2) * e_t`, stationary start.
    Ar1 { dim: usize, coef: f64 },
}

const MIN_MEAN_DISTANCE: f64 = 0.5;
const MEAN_ATTEMPTS: usize = 1000;

impl SynthSpec {
    pub fn dim(&self) -> usize {
        match *self {
            SynthSpec::AnisotropicGaussian { dim, .. } | SynthSpec::Clusters { dim, .. } | SynthSpec::Ar1 { dim, .. } => {
                dim
            }
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::BadSpec(m.to_string()));
        if self.dim() == 0 {
            return bad("dim must be >= 1");
        }
        match *self {
            SynthSpec::AnisotropicGaussian { exponent, .. } if !exponent.is_finite() || exponent < 0.0 => {
                bad("exponent must be finite and >= 0")
            }
            SynthSpec::Clusters { k: 0, .. } => bad("cluster count must be >= 1"),
            SynthSpec::Clusters { spread, .. } if !spread.is_finite() || spread < 0.0 => {
                bad("spread must be finite and >= 0")
            }
            SynthSpec::Ar1 { coef, .. } if !coef.is_finite() || coef.abs() >= 1.0 => bad("|coef| must be < 1"),
            _ => Ok(()),
        }
    }
}

impl FromStr for SynthSpec {
    type Err = SynthError;

    /// `anisotropic-gaussian:DIM:EXP`, `clusters:K:DIM:SPREAD`, `ar1:DIM:COEF`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let bad = || SynthError::BadSpec(format!("cannot parse '{s}'"));
        let int = |p: &str| p.parse::<usize>().map_err(|_| bad());
        let real = |p: &str| p.parse::<f64>().map_err(|_| bad());
        let spec = match parts.as_slice() {
            ["anisotropic-gaussian", dim, exp] => SynthSpec::AnisotropicGaussian {
                dim: int(dim)?,
                exponent: real(exp)?,
            },
            ["clusters", k, dim, spread] => SynthSpec::Clusters {
                k: int(k)?,
                dim: int(dim)?,
                spread: real(spread)?,
            },
            ["ar1", dim, coef] => SynthSpec::Ar1 {
                dim: int(dim)?,
                coef: real(coef)?,
            },
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for SynthSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            SynthSpec::AnisotropicGaussian { dim, exponent } => write!(f, "anisotropic-gaussian:{dim}:{exponent}"),
            SynthSpec::Clusters { k, dim, spread } => write!(f, "clusters:{k}:{dim}:{spread}"),
            SynthSpec::Ar1 { dim, coef } => write!(f, "ar1:{dim}:{coef}"),
        }
    }
}

fn draw_means(k: usize, dim: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(k);
    while means.len() < k {
        let mut candidate = Vec::new();
        for attempt in 0..MEAN_ATTEMPTS {
            candidate = (0..dim).map(|_| rng.uniform_real(-1.0, 1.0)).collect();
            let far = means.iter().all(|m| {
                m.iter().zip(&candidate).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= MIN_MEAN_DISTANCE
            });
            if far || attempt + 1 == MEAN_ATTEMPTS {
                break;
            }
        }
        means.push(candidate);
    }
    means
}

/// True cluster means of `clusters:k:dim:*` for `seed`, as drawn by
/// The means [`synth_features`] draws for a clusters spec under `seed`.
pub fn cluster_means(k: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    draw_means(k, dim, &mut SeededRng::new(seed))
}

/// Deterministic sample of `rows` rows from `spec`.
pub fn synth_features(spec: &SynthSpec, rows: usize, seed: u64) -> Result<FeatureMatrix, SynthError> {
    spec.validate()?;
    if rows == 0 {
        return Err(SynthError::BadSpec("row count must be >= 1".into()));
    }
    let mut rng = SeededRng::new(seed);
    let dim = spec.dim();
    let mut data = Vec::with_capacity(rows * dim);
    match *spec {
        SynthSpec::AnisotropicGaussian { exponent, .. } => {
            let scale: Vec<f64> = (1..=dim).map(|i| (i as f64).powf(-exponent / 2.0)).collect();
            for _ in 0..rows {
                data.extend(scale.iter().map(|s| (s * rng.standard_normal()) as f32));
            }
        }
        SynthSpec::Clusters { k, spread, .. } => {
            let means = draw_means(k, dim, &mut rng);
            for r in 0..rows {
                data.extend(means[r % k].iter().map(|m| (m + spread * rng.standard_normal()) as f32));
            }
        }
        SynthSpec::Ar1 { coef, .. } => {
            let innov = (1.0 - coef * coef).sqrt();
            let mut x: Vec<f64> = (0..dim).map(|_| rng.standard_normal()).collect();
            for r in 0..rows {
                if r > 0 {
                    for v in &mut x {
                        *v = coef * *v + innov * rng.standard_normal();
                    }
                }
                data.extend(x.iter().map(|v| *v as f32));
            }
        }
    }
    FeatureMatrix::new(rows, dim, data).map_err(|e| SynthError::BadSpec(e.to_string()))
}
