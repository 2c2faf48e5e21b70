//! Domain types shared by every module.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoreError {
    #[error("matrix has no rows or no columns")]
    EmptyMatrix,
    #[error("non-finite value {value} at row {row}, col {col}")]
    NonFinite { value: f32, row: usize, col: usize },
    #[error("data length {len} does not match shape {rows}x{cols}")]
    ShapeMismatch { rows: usize, cols: usize, len: usize },
    #[error("invalid range: lo {lo} > hi {hi}")]
    InvalidRange { lo: u64, hi: u64 },
    #[error("token grid needs at least one stream")]
    NoStreams,
    #[error("vocabulary size {0} leaves no room for special ids")]
    BadVocab(u32),
    #[error("id {id} at frame {frame}, stream {stream} is outside vocabulary {vocab}")]
    IdOutOfRange {
        id: u32,
        frame: usize,
        stream: usize,
        vocab: u32,
    },
    #[error("special ids must be distinct and >= vocabulary size {vocab}")]
    BadSpecialIds { vocab: u32 },
    #[error("malformed delayed grid at frame {frame}, stream {stream}: {reason}")]
    MalformedDelayedGrid {
        frame: usize,
        stream: usize,
        reason: &'static str,
    },
}

/// Checks the [`FeatureMatrix`] invariants on raw row-major data.
pub fn validate_matrix(rows: usize, cols: usize, data: &[f32]) -> Result<(), CoreError> {
    if rows == 0 || cols == 0 {
        return Err(CoreError::EmptyMatrix);
    }
    if data.len() != rows * cols {
        return Err(CoreError::ShapeMismatch {
            rows,
            cols,
            len: data.len(),
        });
    }
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite {
            value: data[pos],
            row: pos / cols,
            col: pos % cols,
        });
    }
    Ok(())
}

/// Dense row-major matrix of finite `f32` values. Rows are frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, CoreError> {
        validate_matrix(rows, cols, &data)?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self, CoreError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(CoreError::ShapeMismatch {
                    rows: rows.len(),
                    cols,
                    len: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.cols)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }
}

/// Ids reserved outside the token vocabulary.
///
/// The default assignment for vocabulary `V` is `pad = V`, `bos = V + 1`,
/// `eos = V + 2`; a model therefore scores `V + 3` ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpecialIds {
    pub pad: u32,
    pub bos: u32,
    pub eos: u32,
}

impl SpecialIds {
    pub fn for_vocab(vocab: u32) -> Result<Self, CoreError> {
        if vocab == 0 || vocab > u32::MAX - 3 {
            return Err(CoreError::BadVocab(vocab));
        }
        Ok(Self {
            pad: vocab,
            bos: vocab + 1,
            eos: vocab + 2,
        })
    }

    fn validate(&self, vocab: u32) -> Result<(), CoreError> {
        let ids = [self.pad, self.bos, self.eos];
        let distinct = ids[0] != ids[1] && ids[0] != ids[2] && ids[1] != ids[2];
        if !distinct || ids.iter().any(|&id| id < vocab) {
            return Err(CoreError::BadSpecialIds { vocab });
        }
        Ok(())
    }

    pub fn is_special(&self, id: u32) -> bool {
        id == self.pad || id == self.bos || id == self.eos
    }
}

/// `frames x streams` grid of token ids, all strictly below `vocab_size`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenGrid {
    frames: usize,
    streams: usize,
    vocab_size: u32,
    ids: Vec<u32>,
}

impl TokenGrid {
    pub fn new(frames: usize, streams: usize, vocab_size: u32, ids: Vec<u32>) -> Result<Self, CoreError> {
        if streams == 0 {
            return Err(CoreError::NoStreams);
        }
        SpecialIds::for_vocab(vocab_size)?;
        if ids.len() != frames * streams {
            return Err(CoreError::ShapeMismatch {
                rows: frames,
                cols: streams,
                len: ids.len(),
            });
        }
        if let Some(pos) = ids.iter().position(|&id| id >= vocab_size) {
            return Err(CoreError::IdOutOfRange {
                id: ids[pos],
                frame: pos / streams,
                stream: pos % streams,
                vocab: vocab_size,
            });
        }
        Ok(Self {
            frames,
            streams,
            vocab_size,
            ids,
        })
    }

    pub fn from_frames(streams: usize, vocab_size: u32, frames: &[Vec<u32>]) -> Result<Self, CoreError> {
        let mut ids = Vec::with_capacity(frames.len() * streams);
        for f in frames {
            if f.len() != streams {
                return Err(CoreError::ShapeMismatch {
                    rows: frames.len(),
                    cols: streams,
                    len: f.len(),
                });
            }
            ids.extend_from_slice(f);
        }
        Self::new(frames.len(), streams, vocab_size, ids)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn streams(&self) -> usize {
        self.streams
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    /// Token at 0-indexed `(frame, stream)`.
    pub fn get(&self, frame: usize, stream: usize) -> u32 {
        self.ids[frame * self.streams + stream]
    }

    pub fn frame(&self, frame: usize) -> &[u32] {
        &self.ids[frame * self.streams..(frame + 1) * self.streams]
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }
}

/// A token grid after the per-stream delay shift.
///
/// With content length `T`, delay `d` and `m` streams the grid has
/// `T + d(m-1)` frames. Using 0-indexed frame `f` and stream `j`, the slot
/// holds a real token iff `d*j <= f < d*j + T`; every other slot is `pad`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayedGrid {
    frames: usize,
    streams: usize,
    vocab_size: u32,
    delay: usize,
    specials: SpecialIds,
    ids: Vec<u32>,
}

impl DelayedGrid {
    pub fn from_parts(
        frames: usize,
        streams: usize,
        vocab_size: u32,
        delay: usize,
        specials: SpecialIds,
        ids: Vec<u32>,
    ) -> Result<Self, CoreError> {
        if streams == 0 {
            return Err(CoreError::NoStreams);
        }
        SpecialIds::for_vocab(vocab_size)?;
        specials.validate(vocab_size)?;
        if ids.len() != frames * streams {
            return Err(CoreError::ShapeMismatch {
                rows: frames,
                cols: streams,
                len: ids.len(),
            });
        }
        let span = delay * (streams - 1);
        if frames < span {
            return Err(CoreError::MalformedDelayedGrid {
                frame: frames,
                stream: streams - 1,
                reason: "fewer frames than the delay span",
            });
        }
        let content = frames - span;
        for f in 0..frames {
            for j in 0..streams {
                let id = ids[f * streams + j];
                let start = delay * j;
                let real = f >= start && f < start + content;
                if real && id >= vocab_size {
                    return Err(CoreError::MalformedDelayedGrid {
                        frame: f,
                        stream: j,
                        reason: "token slot holds a special or out-of-range id",
                    });
                }
                if !real && id != specials.pad {
                    return Err(CoreError::MalformedDelayedGrid {
                        frame: f,
                        stream: j,
                        reason: "pad slot holds a non-pad id",
                    });
                }
            }
        }
        Ok(Self {
            frames,
            streams,
            vocab_size,
            delay,
            specials,
            ids,
        })
    }

    /// Total frame count, including the delay padding.
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Frame count of the un-delayed grid.
    pub fn content_frames(&self) -> usize {
        self.frames - self.delay * (self.streams - 1)
    }

    pub fn streams(&self) -> usize {
        self.streams
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    pub fn specials(&self) -> SpecialIds {
        self.specials
    }

    pub fn get(&self, frame: usize, stream: usize) -> u32 {
        self.ids[frame * self.streams + stream]
    }

    pub fn frame(&self, frame: usize) -> &[u32] {
        &self.ids[frame * self.streams..(frame + 1) * self.streams]
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    /// Whether 0-indexed `(frame, stream)` is a real-token slot.
    pub fn is_token_slot(&self, frame: usize, stream: usize) -> bool {
        let start = self.delay * stream;
        frame >= start && frame < start + self.content_frames()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_accepts_finite() {
        assert!(validate_matrix(2, 2, &[1.0, 2.0, 3.0, 4.0]).is_ok());
    }

    #[test]
    fn validate_reports_nan_position() {
        let err = validate_matrix(2, 2, &[1.0, f32::NAN, 3.0, 4.0]).unwrap_err();
        match err {
            CoreError::NonFinite { row, col, value } => {
                assert_eq!((row, col), (0, 1));
                assert!(value.is_nan());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validate_rejects_empty() {
        assert_eq!(validate_matrix(0, 4, &[]), Err(CoreError::EmptyMatrix));
        assert_eq!(FeatureMatrix::new(0, 4, vec![]), Err(CoreError::EmptyMatrix));
    }

    #[test]
    fn infinity_rejected() {
        assert!(matches!(
            FeatureMatrix::new(1, 2, vec![0.0, f32::INFINITY]),
            Err(CoreError::NonFinite { row: 0, col: 1, .. })
        ));
    }

    #[test]
    fn token_grid_rejects_out_of_vocab() {
        let err = TokenGrid::new(2, 2, 4, vec![0, 1, 4, 2]).unwrap_err();
        assert_eq!(
            err,
            CoreError::IdOutOfRange {
                id: 4,
                frame: 1,
                stream: 0,
                vocab: 4
            }
        );
    }

    #[test]
    fn empty_token_grid_is_valid() {
        let g = TokenGrid::new(0, 3, 10, vec![]).unwrap();
        assert_eq!(g.frames(), 0);
        assert!(TokenGrid::new(0, 0, 10, vec![]).is_err());
    }

    #[test]
    fn special_ids_follow_vocab() {
        let s = SpecialIds::for_vocab(16384).unwrap();
        assert_eq!((s.pad, s.bos, s.eos), (16384, 16385, 16386));
    }

    #[test]
    fn delayed_grid_checks_layout() {
        let sp = SpecialIds::for_vocab(8).unwrap();
        // m=2, d=1, T=2: frames [(a,P),(b,c),(P,d)]
        let ok = DelayedGrid::from_parts(3, 2, 8, 1, sp, vec![1, 8, 2, 3, 8, 4]);
        assert!(ok.is_ok());
        let token_in_pad = DelayedGrid::from_parts(3, 2, 8, 1, sp, vec![1, 5, 2, 3, 8, 4]);
        assert!(matches!(
            token_in_pad,
            Err(CoreError::MalformedDelayedGrid { frame: 0, stream: 1, .. })
        ));
        let pad_in_token = DelayedGrid::from_parts(3, 2, 8, 1, sp, vec![1, 8, 8, 3, 8, 4]);
        assert!(matches!(
            pad_in_token,
            Err(CoreError::MalformedDelayedGrid { frame: 1, stream: 0, .. })
        ));
    }
}
