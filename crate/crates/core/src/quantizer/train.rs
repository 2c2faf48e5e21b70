//! Codebook initialization and EMA training.

use super::{product_codes, sq_dist, Codebook, CodebookSet, QuantError, QuantizerKind};
use crate::rng::SeededRng;
use crate::types::FeatureMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub ema_decay: f64,
    pub iterations: usize,
    /// Codewords whose usage accumulator drops below this are reseeded.
    pub dead_code_threshold: f64,
    /// Laplace constant used when normalizing usage counts.
    pub smoothing_epsilon: f64,
    /// Whether codebooks of streams dropped by nested dropout still receive
    /// EMA updates from their assignments.
    pub update_dropped_streams: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            ema_decay: 0.99,
            iterations: 100,
            dead_code_threshold: 1e-2,
            smoothing_epsilon: 1e-5,
            update_dropped_streams: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), QuantError> {
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(QuantError::InvalidConfig(format!(
                "ema_decay must be in (0, 1), got {}",
                self.ema_decay
            )));
        }
        if !(self.dead_code_threshold.is_finite() && self.dead_code_threshold >= 0.0) {
            return Err(QuantError::InvalidConfig("dead_code_threshold must be >= 0".into()));
        }
        if !(self.smoothing_epsilon.is_finite() && self.smoothing_epsilon >= 0.0) {
            return Err(QuantError::InvalidConfig("smoothing_epsilon must be >= 0".into()));
        }
        Ok(())
    }
}

/// Shape of a codebook set to initialize.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodebookSpec {
    pub kind: QuantizerKind,
    /// Total codebook count (RQ: stage count).
    pub codebooks: usize,
    pub codewords: usize,
    pub group_size: usize,
}

impl CodebookSpec {
    /// Eight codebooks of 128 codewords, paired into four streams.
    pub fn reference_default(kind: QuantizerKind) -> Self {
        let group_size = if kind == QuantizerKind::Rq { 1 } else { 2 };
        Self {
            kind,
            codebooks: 8,
            codewords: 128,
            group_size,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub codebooks: CodebookSet,
    /// Mean squared VQ loss per iteration, measured before that iteration's
    /// update. For OPQ it is taken against the masked output.
    pub loss_trace: Vec<f64>,
}

/// k-means++ seeding over `n` points of dimension `dim` stored row-major.
/// Returns `k` distinct points (distinct row indices).
fn seed_plus_plus(points: &[f32], dim: usize, k: usize, rng: &mut SeededRng) -> Vec<f32> {
    let n = points.len() / dim;
    let point = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut chosen = vec![false; n];
    let mut out = Vec::with_capacity(k * dim);
    let first = rng.index(n);
    chosen[first] = true;
    out.extend_from_slice(point(first));
    let mut dmin: Vec<f64> = (0..n).map(|i| sq_dist(point(i), point(first)) as f64).collect();
    dmin[first] = 0.0;
    while out.len() < k * dim {
        let total: f64 = dmin.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.unit() * total;
            let mut pick = None;
            for (i, &d) in dmin.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if u < d {
                        break;
                    }
                    u -= d;
                }
            }
            pick.expect("positive total implies a candidate")
        } else {
            // remaining points coincide with chosen ones: fall back to
            // uniform over unchosen rows
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.index(free.len())]
        };
        chosen[pick] = true;
        out.extend_from_slice(point(pick));
        let p = point(pick).to_vec();
        for (i, d) in dmin.iter_mut().enumerate() {
            if chosen[i] {
                *d = 0.0;
            } else {
                *d = d.min(sq_dist(point(i), &p) as f64);
            }
        }
    }
    out
}

/// Initializes a codebook set from data rows with k-means++ seeding.
///
/// Product kinds seed codebook `c` from column block `c` of the rows. RQ
/// stage 1 seeds from the raw rows; each later stage seeds from the residuals
/// left after quantizing with the stages before it.
pub fn codebook_init(data: &FeatureMatrix, spec: &CodebookSpec, rng: &mut SeededRng) -> Result<CodebookSet, QuantError> {
    if spec.codewords < 2 {
        return Err(QuantError::InvalidCodebook("need at least 2 codewords".into()));
    }
    if spec.codebooks == 0 {
        return Err(QuantError::InvalidCodebook("need at least one codebook".into()));
    }
    if data.rows() < spec.codewords {
        return Err(QuantError::InsufficientData {
            rows: data.rows(),
            needed: spec.codewords,
        });
    }
    let dim = data.cols();
    let (rows, k) = (data.rows(), spec.codewords);
    let mut books = Vec::with_capacity(spec.codebooks);
    match spec.kind {
        QuantizerKind::Pq | QuantizerKind::Opq => {
            if !dim.is_multiple_of(spec.codebooks) {
                return Err(QuantError::IndivisibleDimension {
                    dim,
                    parts: spec.codebooks,
                });
            }
            let sd = dim / spec.codebooks;
            let mut block = Vec::with_capacity(rows * sd);
            for c in 0..spec.codebooks {
                block.clear();
                for row in data.iter_rows() {
                    block.extend_from_slice(&row[c * sd..(c + 1) * sd]);
                }
                books.push(Codebook::new(k, sd, seed_plus_plus(&block, sd, k, rng))?);
            }
        }
        QuantizerKind::Rq => {
            let mut residual = data.as_slice().to_vec();
            for _ in 0..spec.codebooks {
                let book = Codebook::new(k, dim, seed_plus_plus(&residual, dim, k, rng))?;
                for r in residual.chunks_exact_mut(dim) {
                    let cw = book.codeword(book.nearest_index(r));
                    for (x, c) in r.iter_mut().zip(cw) {
                        *x -= c;
                    }
                }
                books.push(book);
            }
        }
    }
    CodebookSet::new(spec.kind, spec.group_size, dim, books)
}

/// Per-iteration assignment statistics for one codebook.
struct Accum {
    counts: Vec<f64>,
    sums: Vec<f64>,
}

impl Accum {
    fn new(k: usize, sd: usize) -> Self {
        Self {
            counts: vec![0.0; k],
            sums: vec![0.0; k * sd],
        }
    }

    fn add(&mut self, k: usize, sub: &[f32]) {
        let sd = sub.len();
        self.counts[k] += 1.0;
        for (s, &x) in self.sums[k * sd..(k + 1) * sd].iter_mut().zip(sub) {
            *s += x as f64;
        }
    }
}

/// Trains a codebook set with exponential-moving-average k-means updates.
///
/// Each iteration assigns every row (OPQ draws a keep count per row and masks
/// the output), then for every codebook
/// `usage <- d*usage + (1-d)*counts`, `sums <- d*sums + (1-d)*assigned_sum`
/// and `codeword <- sums / smoothed_usage`, where `smoothed_usage` is the
/// Laplace-smoothed usage `(u + eps) / (n + K*eps) * n` with `n = sum(u)`.
/// Codewords whose usage falls below the dead-code threshold are reseeded
/// from a random row.
pub fn ema_train(
    data: &FeatureMatrix,
    mut cbs: CodebookSet,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<TrainOutcome, QuantError> {
    cfg.validate()?;
    if data.cols() != cbs.input_dim() {
        return Err(QuantError::DimensionMismatch {
            expected: cbs.input_dim(),
            actual: data.cols(),
        });
    }
    let k = cbs.codewords_per_book();
    if data.rows() < k {
        return Err(QuantError::InsufficientData {
            rows: data.rows(),
            needed: k,
        });
    }
    let kind = cbs.kind();
    let (sd, g, m) = (cbs.sub_dim(), cbs.group_size(), cbs.stream_count());
    let n_books = cbs.codebooks().len();
    let denom = (data.rows() * data.cols()) as f64;
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut residual = vec![0.0f32; data.cols()];

    for _ in 0..cfg.iterations {
        let mut acc: Vec<Accum> = (0..n_books).map(|_| Accum::new(k, sd)).collect();
        let mut loss = 0.0f64;
        for row in data.iter_rows() {
            match kind {
                QuantizerKind::Pq | QuantizerKind::Opq => {
                    let codes = product_codes(row, &cbs);
                    let keep = if kind == QuantizerKind::Opq {
                        rng.uniform_int(1, m as u64)? as usize
                    } else {
                        m
                    };
                    for (c, &code) in codes.iter().enumerate() {
                        let sub = &row[c * sd..(c + 1) * sd];
                        let kept = c / g < keep;
                        if kept || cfg.update_dropped_streams {
                            acc[c].add(code, sub);
                        }
                        loss += if kept {
                            sq_dist(sub, cbs.codebooks()[c].codeword(code)) as f64
                        } else {
                            sub.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>()
                        };
                    }
                }
                QuantizerKind::Rq => {
                    residual.copy_from_slice(row);
                    for (stage, a) in acc.iter_mut().enumerate() {
                        let book = &cbs.codebooks()[stage];
                        let code = book.nearest_index(&residual);
                        a.add(code, &residual);
                        for (r, c) in residual.iter_mut().zip(book.codeword(code)) {
                            *r -= c;
                        }
                    }
                    loss += residual.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>();
                }
            }
        }
        trace.push(loss / denom);

        for stage in 0..n_books {
            let dead = apply_ema(&mut cbs.codebooks_mut()[stage], &acc[stage], cfg);
            for code in dead {
                let r = rng.index(data.rows());
                let fresh = reseed_vector(data.row(r), &cbs, stage);
                let book = &mut cbs.codebooks_mut()[stage];
                let range = code * sd..(code + 1) * sd;
                book.codewords[range.clone()].copy_from_slice(&fresh);
                book.embed_sums[range].copy_from_slice(&fresh);
                book.usage_counts[code] = 1.0;
            }
        }
    }
    Ok(TrainOutcome {
        codebooks: cbs,
        loss_trace: trace,
    })
}

/// Applies one EMA step; returns indices of dead codewords.
fn apply_ema(book: &mut Codebook, acc: &Accum, cfg: &TrainConfig) -> Vec<usize> {
    let d = cfg.ema_decay;
    let (k, sd) = (book.num_codewords, book.sub_dim);
    for i in 0..k {
        book.usage_counts[i] = (d * book.usage_counts[i] as f64 + (1.0 - d) * acc.counts[i]) as f32;
    }
    for (s, &a) in book.embed_sums.iter_mut().zip(&acc.sums) {
        *s = (d * *s as f64 + (1.0 - d) * a) as f32;
    }
    let n: f64 = book.usage_counts.iter().map(|&u| u as f64).sum();
    let eps = cfg.smoothing_epsilon;
    let mut dead = Vec::new();
    for i in 0..k {
        let u = book.usage_counts[i] as f64;
        let smoothed = (u + eps) / (n + k as f64 * eps) * n;
        if smoothed > 0.0 {
            for j in 0..sd {
                book.codewords[i * sd + j] = (book.embed_sums[i * sd + j] as f64 / smoothed) as f32;
            }
        }
        if u < cfg.dead_code_threshold {
            dead.push(i);
        }
    }
    dead
}

/// The vector a dead codeword of `stage` is reseeded with: the row's chunk
/// for product kinds, the row's residual before `stage` for RQ.
fn reseed_vector(row: &[f32], cbs: &CodebookSet, stage: usize) -> Vec<f32> {
    match cbs.kind() {
        QuantizerKind::Pq | QuantizerKind::Opq => {
            let sd = cbs.sub_dim();
            row[stage * sd..(stage + 1) * sd].to_vec()
        }
        QuantizerKind::Rq => {
            let mut r = row.to_vec();
            for book in &cbs.codebooks()[..stage] {
                let cw = book.codeword(book.nearest_index(&r));
                for (x, c) in r.iter_mut().zip(cw) {
                    *x -= c;
                }
            }
            r
        }
    }
}
