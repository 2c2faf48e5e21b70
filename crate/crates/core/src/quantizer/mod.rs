//! Product, residual and ordered product quantization.
//!
//! A [`CodebookSet`] holds `n` codebooks of `K` codewords each. For the
//! product kinds ([`QuantizerKind::Pq`], [`QuantizerKind::Opq`]) the input
//! vector is chunked into `n` equal sub-vectors, each quantized by its own
//! codebook, and every `group_size` consecutive codebook indices are merged
//! into one stream id (`i1 * K + i2` for pairs). The residual kind quantizes
//! the running residual stage by stage, one stream per stage.
//!
//! OPQ differs from PQ only during training: after encoding, a keep count `b`
//! is drawn uniformly from `1..=m` and streams past `b` are zeroed.

mod train;

pub use train::{codebook_init, ema_train, CodebookSpec, TrainConfig, TrainOutcome};

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::rng::SeededRng;
use crate::types::{CoreError, FeatureMatrix, TokenGrid};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantError {
    #[error("dimension {dim} is not divisible into {parts} sub-vectors")]
    IndivisibleDimension { dim: usize, parts: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("index {index} out of range for size {size}")]
    IndexOutOfRange { index: u64, size: u64 },
    #[error("keep count {keep} must be in 1..={streams}")]
    InvalidKeepCount { keep: usize, streams: usize },
    #[error("operation needs a {expected} codebook set, got {actual}")]
    WrongKind {
        expected: &'static str,
        actual: QuantizerKind,
    },
    #[error("{rows} data rows, need at least {needed}")]
    InsufficientData { rows: usize, needed: usize },
    #[error("invalid codebook: {0}")]
    InvalidCodebook(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QuantizerKind {
    Pq,
    Rq,
    Opq,
}

impl QuantizerKind {
    /// Byte used in codebook files.
    pub fn code(self) -> u8 {
        match self {
            QuantizerKind::Pq => 0,
            QuantizerKind::Rq => 1,
            QuantizerKind::Opq => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(QuantizerKind::Pq),
            1 => Some(QuantizerKind::Rq),
            2 => Some(QuantizerKind::Opq),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            QuantizerKind::Pq => "pq",
            QuantizerKind::Rq => "rq",
            QuantizerKind::Opq => "opq",
        }
    }

    pub fn is_product(self) -> bool {
        matches!(self, QuantizerKind::Pq | QuantizerKind::Opq)
    }
}

impl fmt::Display for QuantizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QuantizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pq" => Ok(QuantizerKind::Pq),
            "rq" => Ok(QuantizerKind::Rq),
            "opq" => Ok(QuantizerKind::Opq),
            other => Err(format!("unknown quantizer kind '{other}' (expected pq, rq or opq)")),
        }
    }
}

/// One codebook plus its EMA accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    num_codewords: usize,
    sub_dim: usize,
    codewords: Vec<f32>,
    usage_counts: Vec<f32>,
    embed_sums: Vec<f32>,
}

impl Codebook {
    /// Fresh codebook. Accumulators start as if each codeword had been
    /// assigned exactly once to itself: usage 1, sum equal to the codeword.
    pub fn new(num_codewords: usize, sub_dim: usize, codewords: Vec<f32>) -> Result<Self, QuantError> {
        let usage = vec![1.0; num_codewords];
        let sums = codewords.clone();
        Self::from_parts(num_codewords, sub_dim, codewords, usage, sums)
    }

    pub fn from_parts(
        num_codewords: usize,
        sub_dim: usize,
        codewords: Vec<f32>,
        usage_counts: Vec<f32>,
        embed_sums: Vec<f32>,
    ) -> Result<Self, QuantError> {
        if num_codewords < 2 {
            return Err(QuantError::InvalidCodebook(format!(
                "need at least 2 codewords, got {num_codewords}"
            )));
        }
        if sub_dim == 0 {
            return Err(QuantError::InvalidCodebook("sub_dim must be >= 1".into()));
        }
        let n = num_codewords * sub_dim;
        if codewords.len() != n || embed_sums.len() != n || usage_counts.len() != num_codewords {
            return Err(QuantError::InvalidCodebook("buffer sizes do not match shape".into()));
        }
        if codewords.iter().chain(&embed_sums).any(|v| !v.is_finite()) {
            return Err(QuantError::InvalidCodebook("non-finite codeword or sum".into()));
        }
        if usage_counts.iter().any(|u| !u.is_finite() || *u < 0.0) {
            return Err(QuantError::InvalidCodebook("usage counts must be finite and >= 0".into()));
        }
        Ok(Self {
            num_codewords,
            sub_dim,
            codewords,
            usage_counts,
            embed_sums,
        })
    }

    pub fn num_codewords(&self) -> usize {
        self.num_codewords
    }

    pub fn sub_dim(&self) -> usize {
        self.sub_dim
    }

    pub fn codeword(&self, i: usize) -> &[f32] {
        &self.codewords[i * self.sub_dim..(i + 1) * self.sub_dim]
    }

    pub fn codewords(&self) -> &[f32] {
        &self.codewords
    }

    pub fn usage_counts(&self) -> &[f32] {
        &self.usage_counts
    }

    pub fn embed_sums(&self) -> &[f32] {
        &self.embed_sums
    }

    /// Index of the nearest codeword; ties go to the lowest index.
    fn nearest_index(&self, sub: &[f32]) -> usize {
        let mut best = 0;
        let mut best_d = f32::INFINITY;
        for (k, cw) in self.codewords.chunks_exact(self.sub_dim).enumerate() {
            let d = sq_dist(sub, cw);
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }
}

/// Squared Euclidean distance, accumulated in eight lanes so the loop
/// vectorizes.
#[inline]
pub(crate) fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            let d = x[l] - y[l];
            acc[l] += d * d;
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ra.iter().zip(rb) {
        let d = x - y;
        tail += d * d;
    }
    acc.iter().sum::<f32>() + tail
}

/// Ordered list of codebooks plus kind and grouping metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookSet {
    kind: QuantizerKind,
    group_size: usize,
    input_dim: usize,
    codebooks: Vec<Codebook>,
}

impl CodebookSet {
    pub fn new(
        kind: QuantizerKind,
        group_size: usize,
        input_dim: usize,
        codebooks: Vec<Codebook>,
    ) -> Result<Self, QuantError> {
        let first = codebooks
            .first()
            .ok_or_else(|| QuantError::InvalidCodebook("no codebooks".into()))?;
        let (k, sd) = (first.num_codewords, first.sub_dim);
        if codebooks.iter().any(|c| c.num_codewords != k || c.sub_dim != sd) {
            return Err(QuantError::InvalidCodebook(
                "all codebooks must share codeword count and sub_dim".into(),
            ));
        }
        match kind {
            QuantizerKind::Rq => {
                if group_size != 1 {
                    return Err(QuantError::InvalidCodebook("RQ requires group_size 1".into()));
                }
                if sd != input_dim {
                    return Err(QuantError::InvalidCodebook(format!(
                        "RQ stage dim {sd} != input dim {input_dim}"
                    )));
                }
            }
            QuantizerKind::Pq | QuantizerKind::Opq => {
                if group_size != 1 && group_size != 2 {
                    return Err(QuantError::InvalidCodebook(format!(
                        "group_size {group_size} unsupported (1 or 2)"
                    )));
                }
                if sd * codebooks.len() != input_dim {
                    return Err(QuantError::InvalidCodebook(format!(
                        "sub-dims sum to {} but input dim is {input_dim}",
                        sd * codebooks.len()
                    )));
                }
                if !codebooks.len().is_multiple_of(group_size) {
                    return Err(QuantError::InvalidCodebook(format!(
                        "{} codebooks do not split into groups of {group_size}",
                        codebooks.len()
                    )));
                }
            }
        }
        let vocab = (k as u64).pow(group_size as u32);
        if vocab > (u32::MAX - 3) as u64 {
            return Err(QuantError::InvalidCodebook(format!("stream vocabulary {vocab} too large")));
        }
        Ok(Self {
            kind,
            group_size,
            input_dim,
            codebooks,
        })
    }

    pub fn kind(&self) -> QuantizerKind {
        self.kind
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn codebooks(&self) -> &[Codebook] {
        &self.codebooks
    }

    pub(crate) fn codebooks_mut(&mut self) -> &mut [Codebook] {
        &mut self.codebooks
    }

    pub fn codewords_per_book(&self) -> usize {
        self.codebooks[0].num_codewords
    }

    pub fn sub_dim(&self) -> usize {
        self.codebooks[0].sub_dim
    }

    /// Stream count `m`.
    pub fn stream_count(&self) -> usize {
        self.codebooks.len() / self.group_size
    }

    /// Effective per-stream vocabulary, `K^group_size`.
    pub fn stream_vocab(&self) -> u32 {
        (self.codewords_per_book() as u32).pow(self.group_size as u32)
    }

    /// Output coordinates owned by one stream (product kinds only).
    fn stream_width(&self) -> usize {
        self.sub_dim() * self.group_size
    }

    /// Returns the same set relabelled as another product kind.
    pub fn with_kind(mut self, kind: QuantizerKind) -> Result<Self, QuantError> {
        if !(self.kind.is_product() && kind.is_product()) {
            return Err(QuantError::WrongKind {
                expected: "PQ or OPQ",
                actual: self.kind,
            });
        }
        self.kind = kind;
        Ok(self)
    }
}

/// Encoder output for one vector.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizeResult {
    /// One combined id per stream.
    pub stream_ids: Vec<u32>,
    /// Reconstructed vector, masked past `kept_streams`.
    pub quantized: Vec<f32>,
    pub kept_streams: usize,
}

/// Splits `e` into `n_sub` equal consecutive sub-vectors.
pub fn chunk(e: &[f32], n_sub: usize) -> Result<Vec<&[f32]>, QuantError> {
    if n_sub == 0 || !e.len().is_multiple_of(n_sub) {
        return Err(QuantError::IndivisibleDimension {
            dim: e.len(),
            parts: n_sub,
        });
    }
    Ok(e.chunks_exact(e.len() / n_sub).collect())
}

/// Nearest codeword by squared Euclidean distance, lowest index on ties.
pub fn nearest_codeword<'a>(sub: &[f32], cb: &'a Codebook) -> Result<(usize, &'a [f32]), QuantError> {
    if sub.len() != cb.sub_dim {
        return Err(QuantError::DimensionMismatch {
            expected: cb.sub_dim,
            actual: sub.len(),
        });
    }
    let k = cb.nearest_index(sub);
    Ok((k, cb.codeword(k)))
}

/// `i1 * size2 + i2`.
pub fn combine_indices(i1: u32, i2: u32, size2: u32) -> Result<u32, QuantError> {
    if i2 >= size2 {
        return Err(QuantError::IndexOutOfRange {
            index: i2 as u64,
            size: size2 as u64,
        });
    }
    i1.checked_mul(size2)
        .and_then(|v| v.checked_add(i2))
        .ok_or(QuantError::IndexOutOfRange {
            index: i1 as u64,
            size: (u32::MAX / size2) as u64,
        })
}

/// Inverse of [`combine_indices`]. `size2` must be non-zero.
pub fn split_index(combined: u32, size2: u32) -> (u32, u32) {
    (combined / size2, combined % size2)
}

/// Zeroes every stream past the first `keep` of `streams` equal-width
/// streams laid out consecutively in `z`.
pub fn nested_dropout(z: &mut [f32], streams: usize, keep: usize) -> Result<(), QuantError> {
    if keep == 0 || keep > streams {
        return Err(QuantError::InvalidKeepCount { keep, streams });
    }
    if !z.len().is_multiple_of(streams) {
        return Err(QuantError::IndivisibleDimension {
            dim: z.len(),
            parts: streams,
        });
    }
    let width = z.len() / streams;
    z[keep * width..].fill(0.0);
    Ok(())
}

fn check_dim(e: &[f32], cbs: &CodebookSet) -> Result<(), QuantError> {
    if e.len() != cbs.input_dim {
        return Err(QuantError::DimensionMismatch {
            expected: cbs.input_dim,
            actual: e.len(),
        });
    }
    Ok(())
}

/// Merges per-codebook indices into stream ids.
fn stream_ids_from_codes(codes: &[usize], cbs: &CodebookSet) -> Vec<u32> {
    let k = cbs.codewords_per_book() as u32;
    codes
        .chunks_exact(cbs.group_size)
        .map(|g| g.iter().fold(0u32, |acc, &c| acc * k + c as u32))
        .collect()
}

/// Per-codebook nearest indices for the product kinds.
pub(crate) fn product_codes(e: &[f32], cbs: &CodebookSet) -> Vec<usize> {
    let sd = cbs.sub_dim();
    cbs.codebooks
        .iter()
        .zip(e.chunks_exact(sd))
        .map(|(cb, sub)| cb.nearest_index(sub))
        .collect()
}

/// Plain product quantization: no dropout.
pub fn pq_encode(e: &[f32], cbs: &CodebookSet) -> Result<QuantizeResult, QuantError> {
    if !cbs.kind.is_product() {
        return Err(QuantError::WrongKind {
            expected: "PQ or OPQ",
            actual: cbs.kind,
        });
    }
    check_dim(e, cbs)?;
    let codes = product_codes(e, cbs);
    let mut quantized = Vec::with_capacity(cbs.input_dim);
    for (cb, &c) in cbs.codebooks.iter().zip(&codes) {
        quantized.extend_from_slice(cb.codeword(c));
    }
    Ok(QuantizeResult {
        stream_ids: stream_ids_from_codes(&codes, cbs),
        quantized,
        kept_streams: cbs.stream_count(),
    })
}

/// Greedy residual quantization; the output is the sum of chosen codewords.
pub fn rq_encode(e: &[f32], cbs: &CodebookSet) -> Result<QuantizeResult, QuantError> {
    if cbs.kind != QuantizerKind::Rq {
        return Err(QuantError::WrongKind {
            expected: "RQ",
            actual: cbs.kind,
        });
    }
    check_dim(e, cbs)?;
    let mut residual = e.to_vec();
    let mut quantized = vec![0.0f32; e.len()];
    let mut ids = Vec::with_capacity(cbs.codebooks.len());
    for cb in &cbs.codebooks {
        let k = cb.nearest_index(&residual);
        for ((r, q), c) in residual.iter_mut().zip(quantized.iter_mut()).zip(cb.codeword(k)) {
            *r -= c;
            *q += c;
        }
        ids.push(k as u32);
    }
    Ok(QuantizeResult {
        stream_ids: ids,
        quantized,
        kept_streams: cbs.stream_count(),
    })
}

fn require_opq(cbs: &CodebookSet) -> Result<(), QuantError> {
    if cbs.kind != QuantizerKind::Opq {
        return Err(QuantError::WrongKind {
            expected: "OPQ",
            actual: cbs.kind,
        });
    }
    Ok(())
}

/// Training-time OPQ encode: product encode, draw `b` in `1..=m`, mask.
pub fn opq_encode_train(e: &[f32], cbs: &CodebookSet, rng: &mut SeededRng) -> Result<QuantizeResult, QuantError> {
    require_opq(cbs)?;
    let mut out = pq_encode(e, cbs)?;
    let m = cbs.stream_count();
    let keep = rng.uniform_int(1, m as u64)? as usize;
    nested_dropout(&mut out.quantized, m, keep)?;
    out.kept_streams = keep;
    Ok(out)
}

/// Inference-time OPQ encode: dropout disabled, identical to [`pq_encode`].
pub fn opq_encode_infer(e: &[f32], cbs: &CodebookSet) -> Result<QuantizeResult, QuantError> {
    require_opq(cbs)?;
    pq_encode(e, cbs)
}

/// Inference encode for any kind.
pub fn encode(e: &[f32], cbs: &CodebookSet) -> Result<QuantizeResult, QuantError> {
    match cbs.kind {
        QuantizerKind::Rq => rq_encode(e, cbs),
        QuantizerKind::Pq | QuantizerKind::Opq => pq_encode(e, cbs),
    }
}

/// Reconstructs a vector from the first `prefix` streams.
///
/// Product kinds zero-fill the coordinates of streams past the prefix; RQ
/// sums the codewords of the first `prefix` stages.
pub fn decode(stream_ids: &[u32], cbs: &CodebookSet, prefix: usize) -> Result<Vec<f32>, QuantError> {
    let mut out = vec![0.0f32; cbs.input_dim];
    decode_into(stream_ids, cbs, prefix, &mut out)?;
    Ok(out)
}

pub(crate) fn decode_into(
    stream_ids: &[u32],
    cbs: &CodebookSet,
    prefix: usize,
    out: &mut [f32],
) -> Result<(), QuantError> {
    let m = cbs.stream_count();
    if stream_ids.len() != m {
        return Err(QuantError::DimensionMismatch {
            expected: m,
            actual: stream_ids.len(),
        });
    }
    if prefix == 0 || prefix > m {
        return Err(QuantError::InvalidKeepCount { keep: prefix, streams: m });
    }
    let vocab = cbs.stream_vocab();
    if let Some(&bad) = stream_ids.iter().find(|&&id| id >= vocab) {
        return Err(QuantError::IndexOutOfRange {
            index: bad as u64,
            size: vocab as u64,
        });
    }
    out.fill(0.0);
    let k = cbs.codewords_per_book() as u32;
    match cbs.kind {
        QuantizerKind::Rq => {
            for (cb, &id) in cbs.codebooks.iter().zip(stream_ids).take(prefix) {
                for (o, c) in out.iter_mut().zip(cb.codeword(id as usize)) {
                    *o += c;
                }
            }
        }
        QuantizerKind::Pq | QuantizerKind::Opq => {
            let sd = cbs.sub_dim();
            let width = cbs.stream_width();
            for (s, &id) in stream_ids.iter().enumerate().take(prefix) {
                let mut rest = id;
                // last member of the group holds the least significant digit
                for g in (0..cbs.group_size).rev() {
                    let (hi, lo) = split_index(rest, k);
                    rest = hi;
                    let cb_index = s * cbs.group_size + g;
                    let start = s * width + g * sd;
                    out[start..start + sd].copy_from_slice(cbs.codebooks[cb_index].codeword(lo as usize));
                }
            }
        }
    }
    Ok(())
}

/// Inference-encodes every row into a `rows x m` token grid.
pub fn encode_matrix(data: &FeatureMatrix, cbs: &CodebookSet) -> Result<TokenGrid, QuantError> {
    let mut ids = Vec::with_capacity(data.rows() * cbs.stream_count());
    for row in data.iter_rows() {
        ids.extend(encode(row, cbs)?.stream_ids);
    }
    Ok(TokenGrid::new(data.rows(), cbs.stream_count(), cbs.stream_vocab(), ids)?)
}

/// Decodes every frame of `grid` from its first `prefix` streams.
pub fn decode_grid(grid: &TokenGrid, cbs: &CodebookSet, prefix: usize) -> Result<FeatureMatrix, QuantError> {
    if grid.frames() == 0 {
        return Err(QuantError::Core(CoreError::EmptyMatrix));
    }
    let mut data = vec![0.0f32; grid.frames() * cbs.input_dim];
    for (t, out) in data.chunks_exact_mut(cbs.input_dim).enumerate() {
        decode_into(grid.frame(t), cbs, prefix, out)?;
    }
    Ok(FeatureMatrix::new(grid.frames(), cbs.input_dim, data)?)
}
