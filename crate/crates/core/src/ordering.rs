//! Prefix-reconstruction analysis, distortion metrics, the weighted codec
//! loss, and the clip-and-shuffle transform.

use std::io::Write;

use thiserror::Error;

use crate::quantizer::{decode_grid, encode_matrix, CodebookSet, QuantError, QuantizerKind};
use crate::rng::SeededRng;
use crate::types::{CoreError, FeatureMatrix};

#[derive(Debug, Error)]
pub enum OrderingError {
    #[error("shape mismatch: {left_rows}x{left_cols} vs {right_rows}x{right_cols}")]
    ShapeMismatch {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
    #[error("loss term {name} is not finite: {value}")]
    NonFinite { name: &'static str, value: f64 },
    #[error("loss term {name} is negative: {value}")]
    NegativeTerm { name: &'static str, value: f64 },
    #[error("input has {rows} rows, needs at least one slice of {frame_rate}")]
    TooShort { rows: usize, frame_rate: usize },
    #[error("cannot exclude c0 from a single-coefficient matrix")]
    NoCoefficients,
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn same_shape(x: &FeatureMatrix, y: &FeatureMatrix) -> Result<(), OrderingError> {
    if x.rows() != y.rows() || x.cols() != y.cols() {
        return Err(OrderingError::ShapeMismatch {
            left_rows: x.rows(),
            left_cols: x.cols(),
            right_rows: y.rows(),
            right_cols: y.cols(),
        });
    }
    Ok(())
}

/// Mean squared elementwise difference (sum divided by element count).
pub fn l2_loss(x: &FeatureMatrix, y: &FeatureMatrix) -> Result<f64, OrderingError> {
    same_shape(x, y)?;
    let sum: f64 = x
        .as_slice()
        .iter()
        .zip(y.as_slice())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(sum / x.as_slice().len() as f64)
}

/// Weights of the four codec loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub vq: f64,
    pub semantic: f64,
    pub acoustic: f64,
    pub adversarial: f64,
}

impl Default for LossWeights {
    /// `(1, 1000, 10, 1)`.
    fn default() -> Self {
        Self {
            vq: 1.0,
            semantic: 1000.0,
            acoustic: 10.0,
            adversarial: 1.0,
        }
    }
}

fn check_term(name: &'static str, value: f64) -> Result<(), OrderingError> {
    if !value.is_finite() {
        return Err(OrderingError::NonFinite { name, value });
    }
    if value < 0.0 {
        return Err(OrderingError::NegativeTerm { name, value });
    }
    Ok(())
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), OrderingError> {
        check_term("lambda1", self.vq)?;
        check_term("lambda2", self.semantic)?;
        check_term("lambda3", self.acoustic)?;
        check_term("lambda4", self.adversarial)
    }
}

/// `l1*vq + l2*sem + l3*acou + l4*adv`. The adversarial term is taken as
/// given; nothing here computes it.
pub fn total_loss(vq: f64, sem: f64, acou: f64, adv: f64, w: &LossWeights) -> Result<f64, OrderingError> {
    check_term("vq", vq)?;
    check_term("semantic", sem)?;
    check_term("acoustic", acou)?;
    check_term("adversarial", adv)?;
    w.validate()?;
    Ok(w.vq * vq + w.semantic * sem + w.acoustic * acou + w.adversarial * adv)
}

/// `10 / ln(10) * sqrt(2)`.
pub const MCD_SCALE: f64 = 10.0 / std::f64::consts::LN_10 * std::f64::consts::SQRT_2;

/// Mel-cepstral distortion in dB over all columns.
pub fn mcd(x: &FeatureMatrix, y: &FeatureMatrix) -> Result<f64, OrderingError> {
    mcd_with(x, y, false)
}

/// Mel-cepstral distortion: `MCD_SCALE` times the mean over frames of the
/// Euclidean norm of the cepstral difference, optionally skipping column 0.
pub fn mcd_with(x: &FeatureMatrix, y: &FeatureMatrix, exclude_c0: bool) -> Result<f64, OrderingError> {
    same_shape(x, y)?;
    let skip = usize::from(exclude_c0);
    if skip >= x.cols() {
        return Err(OrderingError::NoCoefficients);
    }
    let total: f64 = x
        .iter_rows()
        .zip(y.iter_rows())
        .map(|(a, b)| {
            a[skip..]
                .iter()
                .zip(&b[skip..])
                .map(|(&p, &q)| {
                    let d = p as f64 - q as f64;
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(MCD_SCALE * total / x.rows() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrefixRecord {
    pub b: usize,
    pub mse: f64,
    pub mcd_db: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportMetadata {
    pub dataset: String,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
}

/// Distortion of reconstructions from every stream prefix `b = 1..=m`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderingReport {
    pub kind: QuantizerKind,
    pub stream_count: usize,
    pub records: Vec<PrefixRecord>,
    pub metadata: ReportMetadata,
}

impl OrderingReport {
    pub fn mse(&self, b: usize) -> f64 {
        self.records[b - 1].mse
    }

    /// Label of the distortion metrics present in the report.
    pub fn metric_label(&self) -> &'static str {
        if self.records.iter().any(|r| r.mcd_db.is_some()) {
            "mse+mcd"
        } else {
            "mse"
        }
    }

    /// CSV with header `kind,m,b,mse,mcd_db`, LF line endings. `mcd_db` is
    /// empty when no MCD was computed.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), OrderingError> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        let io = |e: csv::Error| OrderingError::Io(e.into());
        out.write_record(["kind", "m", "b", "mse", "mcd_db"]).map_err(io)?;
        for r in &self.records {
            let mcd = r.mcd_db.map(|v| v.to_string()).unwrap_or_default();
            out.write_record([
                self.kind.name().to_string(),
                self.stream_count.to_string(),
                r.b.to_string(),
                r.mse.to_string(),
                mcd,
            ])
            .map_err(io)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrefixOptions {
    /// Columns are cepstral coefficients; also report MCD.
    pub cepstral: bool,
    pub mcd_exclude_c0: bool,
    pub metadata: ReportMetadata,
}

/// Encodes every row at inference and measures distortion when decoding from
/// each stream prefix. Dropped streams are zero-filled at the decoder input.
pub fn prefix_curve(data: &FeatureMatrix, cbs: &CodebookSet, opts: &PrefixOptions) -> Result<OrderingReport, OrderingError> {
    let grid = encode_matrix(data, cbs)?;
    let m = cbs.stream_count();
    let mut records = Vec::with_capacity(m);
    for b in 1..=m {
        let recon = decode_grid(&grid, cbs, b)?;
        let mse = l2_loss(data, &recon)?;
        let mcd_db = if opts.cepstral {
            Some(mcd_with(data, &recon, opts.mcd_exclude_c0)?)
        } else {
            None
        };
        records.push(PrefixRecord { b, mse, mcd_db });
    }
    Ok(OrderingReport {
        kind: cbs.kind(),
        stream_count: m,
        records,
        metadata: opts.metadata.clone(),
    })
}

/// Random choices of one clip-and-shuffle draw.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipPlan {
    pub start: usize,
    pub len: usize,
    pub frame_rate: usize,
    /// Slice order: output slice `i` is input slice `order[i]` of the segment.
    pub order: Vec<usize>,
}

impl ClipPlan {
    /// Segment length for a drawn fraction, kept inside
    /// `[ceil(rows/4), floor(3*rows/4)]` and at least one frame.
    pub fn segment_len(rows: usize, fraction: f64) -> usize {
        let lo = rows.div_ceil(4).max(1);
        let hi = (3 * rows / 4).max(lo);
        ((fraction * rows as f64).round() as usize).clamp(lo, hi)
    }

    fn with_fraction(rows: usize, frame_rate: usize, fraction: f64, rng: &mut SeededRng) -> Self {
        let len = Self::segment_len(rows, fraction);
        let start = rng.index(rows - len + 1);
        let mut order: Vec<usize> = (0..len.div_ceil(frame_rate)).collect();
        rng.shuffle(&mut order);
        Self {
            start,
            len,
            frame_rate,
            order,
        }
    }

    /// Draws fraction in `[0.25, 0.75]`, start uniform over feasible
    /// positions, and a uniform permutation of one-second slices.
    pub fn draw(rows: usize, frame_rate: usize, rng: &mut SeededRng) -> Result<Self, OrderingError> {
        if frame_rate == 0 || rows < frame_rate {
            return Err(OrderingError::TooShort { rows, frame_rate });
        }
        let fraction = rng.uniform_real(0.25, 0.75);
        Ok(Self::with_fraction(rows, frame_rate, fraction, rng))
    }

    /// Input row index for each output row.
    pub fn source_rows(&self) -> Vec<usize> {
        let mut rows = Vec::with_capacity(self.len);
        for &s in &self.order {
            let lo = s * self.frame_rate;
            let hi = ((s + 1) * self.frame_rate).min(self.len);
            rows.extend((lo..hi).map(|r| self.start + r));
        }
        rows
    }

    pub fn apply(&self, a: &FeatureMatrix) -> Result<FeatureMatrix, OrderingError> {
        let mut data = Vec::with_capacity(self.len * a.cols());
        for r in self.source_rows() {
            data.extend_from_slice(a.row(r));
        }
        Ok(FeatureMatrix::new(self.len, a.cols(), data)?)
    }
}

/// Samples a 25–75% segment, cuts it into `frame_rate`-row slices (the last
/// may be shorter) and shuffles them.
pub fn clip_and_shuffle(a: &FeatureMatrix, frame_rate: usize, rng: &mut SeededRng) -> Result<FeatureMatrix, OrderingError> {
    ClipPlan::draw(a.rows(), frame_rate, rng)?.apply(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(rows: usize, cols: usize, seed: u64) -> FeatureMatrix {
        let mut rng = SeededRng::new(seed);
        FeatureMatrix::new(rows, cols, (0..rows * cols).map(|_| rng.standard_normal() as f32).collect()).unwrap()
    }

    #[test]
    fn l2_examples() {
        let x = random(3, 3, 0);
        assert_eq!(l2_loss(&x, &x).unwrap(), 0.0);
        let a = FeatureMatrix::new(1, 1, vec![1.0]).unwrap();
        let b = FeatureMatrix::new(1, 1, vec![3.0]).unwrap();
        assert_eq!(l2_loss(&a, &b).unwrap(), 4.0);
        assert!(matches!(l2_loss(&a, &x), Err(OrderingError::ShapeMismatch { .. })));
    }

    #[test]
    fn l2_matches_double_loop() {
        let (x, y) = (random(10, 10, 1), random(10, 10, 2));
        let mut s = 0.0f64;
        for i in 0..10 {
            for j in 0..10 {
                let d = x.row(i)[j] as f64 - y.row(i)[j] as f64;
                s += d * d;
            }
        }
        assert!((l2_loss(&x, &y).unwrap() - s / 100.0).abs() < 1e-12);
    }

    #[test]
    fn total_loss_examples() {
        let w = LossWeights::default();
        assert_eq!(total_loss(0.0, 0.0, 0.0, 0.0, &w).unwrap(), 0.0);
        assert_eq!(total_loss(1.0, 0.0, 0.0, 0.0, &w).unwrap(), 1.0);
        assert_eq!(total_loss(1.0, 1.0, 1.0, 1.0, &w).unwrap(), 1012.0);
        assert!(matches!(
            total_loss(f64::NAN, 0.0, 0.0, 0.0, &w),
            Err(OrderingError::NonFinite { name: "vq", .. })
        ));
        assert!(matches!(
            total_loss(0.0, 0.0, 0.0, -1.0, &w),
            Err(OrderingError::NegativeTerm { .. })
        ));
    }

    #[test]
    fn mcd_closed_form() {
        let x = random(4, 13, 3);
        assert_eq!(mcd(&x, &x).unwrap(), 0.0);
        let a = FeatureMatrix::new(1, 1, vec![0.0]).unwrap();
        let b = FeatureMatrix::new(1, 1, vec![1.0]).unwrap();
        let v = mcd(&a, &b).unwrap();
        assert!((v - 6.1415).abs() < 1e-3, "{v}");
        assert!((v - 10.0 / 10f64.ln() * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn mcd_symmetric_and_c0_flag() {
        let (x, y) = (random(20, 5, 4), random(20, 5, 5));
        assert_eq!(mcd(&x, &y).unwrap(), mcd(&y, &x).unwrap());
        let mut shifted = x.clone().into_vec();
        for r in shifted.chunks_exact_mut(5) {
            r[0] += 3.0;
        }
        let shifted = FeatureMatrix::new(20, 5, shifted).unwrap();
        assert!(mcd_with(&x, &shifted, true).unwrap().abs() < 1e-12);
        assert!(mcd(&x, &shifted).unwrap() > 1.0);
        let one = random(2, 1, 0);
        assert!(matches!(mcd_with(&one, &one, true), Err(OrderingError::NoCoefficients)));
    }

    #[test]
    fn half_fraction_gives_half_length() {
        assert_eq!(ClipPlan::segment_len(400, 0.5), 200);
        assert_eq!(ClipPlan::segment_len(400, 0.25), 100);
        assert_eq!(ClipPlan::segment_len(400, 0.75), 300);
        let mut rng = SeededRng::new(0);
        let plan = ClipPlan::with_fraction(400, 100, 0.5, &mut rng);
        assert_eq!(plan.len, 200);
        assert_eq!(plan.order.len(), 2);
    }

    #[test]
    fn clip_rows_come_from_input() {
        let a = FeatureMatrix::new(400, 1, (0..400).map(|i| i as f32).collect()).unwrap();
        let mut rng = SeededRng::new(1);
        for _ in 0..100 {
            let out = clip_and_shuffle(&a, 100, &mut rng).unwrap();
            assert!((100..=300).contains(&out.rows()));
            let mut vals: Vec<u32> = out.as_slice().iter().map(|&v| v as u32).collect();
            vals.sort_unstable();
            vals.dedup();
            assert_eq!(vals.len(), out.rows());
            assert!(vals.iter().all(|&v| v < 400));
        }
    }

    #[test]
    fn clip_is_seed_deterministic_and_checks_length() {
        let a = random(250, 3, 7);
        let x = clip_and_shuffle(&a, 100, &mut SeededRng::new(5)).unwrap();
        let y = clip_and_shuffle(&a, 100, &mut SeededRng::new(5)).unwrap();
        assert_eq!(x, y);
        let short = random(99, 3, 0);
        assert!(matches!(
            clip_and_shuffle(&short, 100, &mut SeededRng::new(0)),
            Err(OrderingError::TooShort { rows: 99, frame_rate: 100 })
        ));
    }

    #[test]
    fn report_csv_layout() {
        let report = OrderingReport {
            kind: QuantizerKind::Opq,
            stream_count: 2,
            records: vec![
                PrefixRecord {
                    b: 1,
                    mse: 0.5,
                    mcd_db: None,
                },
                PrefixRecord {
                    b: 2,
                    mse: 0.25,
                    mcd_db: Some(1.5),
                },
            ],
            metadata: ReportMetadata::default(),
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "kind,m,b,mse,mcd_db\nopq,2,1,0.5,\nopq,2,2,0.25,1.5\n"
        );
    }
}
