use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::quantizer::{Codebook, CodebookSet, QuantError, QuantizerKind};
use crate::types::{CoreError, DelayedGrid, FeatureMatrix, SpecialIds, TokenGrid};

pub const FORMAT_VERSION: u32 = 1;

const FEATURES_MAGIC: &[u8; 4] = b"SOFM";
const CODEBOOKS_MAGIC: &[u8; 4] = b"SOCB";
const GRID_MAGIC: &[u8; 4] = b"SOTG";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected}, found {found:?}")]
    BadMagic { expected: &'static str, found: [u8; 4] },
    #[error("unsupported format version {found} (expected 1)")]
    VersionMismatch { found: u32 },
    #[error("file truncated: need {needed} bytes, have {available}")]
    TruncatedFile { needed: u64, available: u64 },
    #[error("unknown quantizer kind byte {0}")]
    UnknownKind(u8),
    #[error("reserved field {field} is not zero")]
    NonZeroReserved { field: &'static str },
    #[error("delayed flag must be 0 or 1, got {0}")]
    BadDelayedFlag(u8),
    #[error("{extra} unexpected bytes after the payload")]
    TrailingData { extra: u64 },
    #[error("id {id} at frame {frame}, stream {stream} is outside vocabulary {vocab}")]
    IdOutOfRange {
        id: u32,
        frame: usize,
        stream: usize,
        vocab: u32,
    },
    #[error("malformed delayed grid at frame {frame}, stream {stream}: {reason}")]
    MalformedDelayedGrid {
        frame: usize,
        stream: usize,
        reason: &'static str,
    },
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<CoreError> for FormatError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::IdOutOfRange {
                id,
                frame,
                stream,
                vocab,
            } => FormatError::IdOutOfRange {
                id,
                frame,
                stream,
                vocab,
            },
            CoreError::MalformedDelayedGrid { frame, stream, reason } => {
                FormatError::MalformedDelayedGrid { frame, stream, reason }
            }
            other => FormatError::InvalidPayload(other.to_string()),
        }
    }
}

impl From<QuantError> for FormatError {
    fn from(e: QuantError) -> Self {
        FormatError::InvalidPayload(e.to_string())
    }
}

/// A grid file holds either a plain or a delayed grid; the header says which.
#[derive(Debug, Clone, PartialEq)]
pub enum GridFile {
    Plain(TokenGrid),
    Delayed(DelayedGrid),
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn remaining(&self) -> u64 {
        (self.buf.len() - self.pos) as u64
    }

    fn need(&self, bytes: u64) -> Result<(), FormatError> {
        if self.remaining() < bytes {
            return Err(FormatError::TruncatedFile {
                needed: self.pos as u64 + bytes,
                available: self.buf.len() as u64,
            });
        }
        Ok(())
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        self.need(N as u64)?;
        let mut out = [0u8; N];
        out.copy_from_slice(&self.buf[self.pos..self.pos + N]);
        self.pos += N;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take()?))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, FormatError> {
        self.need(n as u64 * 4)?;
        Ok((0..n).map(|_| f32::from_le_bytes(self.take().unwrap())).collect())
    }

    fn u32s(&mut self, n: usize) -> Result<Vec<u32>, FormatError> {
        self.need(n as u64 * 4)?;
        Ok((0..n).map(|_| u32::from_le_bytes(self.take().unwrap())).collect())
    }

    fn preamble(&mut self, magic: &'static [u8; 4]) -> Result<(), FormatError> {
        let found: [u8; 4] = self.take()?;
        if &found != magic {
            return Err(FormatError::BadMagic {
                expected: std::str::from_utf8(magic).unwrap(),
                found,
            });
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(FormatError::VersionMismatch { found: version });
        }
        Ok(())
    }

    fn finish(&self) -> Result<(), FormatError> {
        match self.remaining() {
            0 => Ok(()),
            extra => Err(FormatError::TrailingData { extra }),
        }
    }
}

fn header(magic: &[u8; 4], capacity: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(capacity);
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, vs: &[f32]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn to_u32(v: usize, what: &str) -> Result<usize, FormatError> {
    if v > u32::MAX as usize {
        return Err(FormatError::InvalidPayload(format!("{what} {v} does not fit in 32 bits")));
    }
    Ok(v)
}

pub fn features_to_bytes(m: &FeatureMatrix) -> Result<Vec<u8>, FormatError> {
    let mut out = header(FEATURES_MAGIC, 16 + m.as_slice().len() * 4);
    put_u32(&mut out, to_u32(m.rows(), "row count")?);
    put_u32(&mut out, to_u32(m.cols(), "column count")?);
    put_f32s(&mut out, m.as_slice());
    Ok(out)
}

pub fn features_from_bytes(buf: &[u8]) -> Result<FeatureMatrix, FormatError> {
    let mut r = Reader::new(buf);
    r.preamble(FEATURES_MAGIC)?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let data = r.f32s(rows * cols)?;
    r.finish()?;
    Ok(FeatureMatrix::new(rows, cols, data)?)
}

pub fn codebooks_to_bytes(set: &CodebookSet) -> Result<Vec<u8>, FormatError> {
    let (k, sd) = (set.codewords_per_book(), set.sub_dim());
    let per_book = (2 * k * sd + k) * 4;
    let mut out = header(CODEBOOKS_MAGIC, 28 + set.codebooks().len() * per_book);
    out.push(set.kind().code());
    out.push(set.group_size() as u8);
    out.extend_from_slice(&0u16.to_le_bytes());
    put_u32(&mut out, to_u32(set.codebooks().len(), "codebook count")?);
    put_u32(&mut out, to_u32(k, "codeword count")?);
    put_u32(&mut out, to_u32(sd, "sub_dim")?);
    put_u32(&mut out, to_u32(set.input_dim(), "input_dim")?);
    for cb in set.codebooks() {
        put_f32s(&mut out, cb.codewords());
        put_f32s(&mut out, cb.usage_counts());
        put_f32s(&mut out, cb.embed_sums());
    }
    Ok(out)
}

pub fn codebooks_from_bytes(buf: &[u8]) -> Result<CodebookSet, FormatError> {
    let mut r = Reader::new(buf);
    r.preamble(CODEBOOKS_MAGIC)?;
    let code = r.u8()?;
    let kind = QuantizerKind::from_code(code).ok_or(FormatError::UnknownKind(code))?;
    let group_size = r.u8()? as usize;
    if r.u16()? != 0 {
        return Err(FormatError::NonZeroReserved { field: "codebook header" });
    }
    let count = r.u32()? as usize;
    let k = r.u32()? as usize;
    let sub_dim = r.u32()? as usize;
    let input_dim = r.u32()? as usize;
    let cells = k as u64 * sub_dim as u64;
    r.need(count as u64 * (2 * cells + k as u64) * 4)?;
    let mut books = Vec::with_capacity(count);
    for _ in 0..count {
        let codewords = r.f32s(k * sub_dim)?;
        let usage = r.f32s(k)?;
        let sums = r.f32s(k * sub_dim)?;
        books.push(Codebook::from_parts(k, sub_dim, codewords, usage, sums)?);
    }
    r.finish()?;
    Ok(CodebookSet::new(kind, group_size, input_dim, books)?)
}

pub fn grid_to_bytes(grid: &GridFile) -> Result<Vec<u8>, FormatError> {
    let (flag, frames, streams, vocab, delay, specials, ids) = match grid {
        GridFile::Plain(g) => (
            0u8,
            g.frames(),
            g.streams(),
            g.vocab_size(),
            0,
            SpecialIds::for_vocab(g.vocab_size())?,
            g.ids(),
        ),
        GridFile::Delayed(g) => (
            1u8,
            g.frames(),
            g.streams(),
            g.vocab_size(),
            g.delay(),
            g.specials(),
            g.ids(),
        ),
    };
    let mut out = header(GRID_MAGIC, 40 + ids.len() * 4);
    out.push(flag);
    out.push(0);
    out.extend_from_slice(&0u16.to_le_bytes());
    put_u32(&mut out, to_u32(frames, "frame count")?);
    put_u32(&mut out, to_u32(streams, "stream count")?);
    put_u32(&mut out, vocab as usize);
    put_u32(&mut out, to_u32(delay, "delay")?);
    for id in [specials.pad, specials.bos, specials.eos] {
        put_u32(&mut out, id as usize);
    }
    for id in ids {
        out.extend_from_slice(&id.to_le_bytes());
    }
    Ok(out)
}

/// Plain grids must carry delay 0 and the default special ids `V..V+2`.
pub fn grid_from_bytes(buf: &[u8]) -> Result<GridFile, FormatError> {
    let mut r = Reader::new(buf);
    r.preamble(GRID_MAGIC)?;
    let flag = r.u8()?;
    if flag > 1 {
        return Err(FormatError::BadDelayedFlag(flag));
    }
    if r.u8()? != 0 || r.u16()? != 0 {
        return Err(FormatError::NonZeroReserved { field: "grid header" });
    }
    let frames = r.u32()? as usize;
    let streams = r.u32()? as usize;
    let vocab = r.u32()?;
    let delay = r.u32()? as usize;
    let specials = SpecialIds {
        pad: r.u32()?,
        bos: r.u32()?,
        eos: r.u32()?,
    };
    let ids = r.u32s(frames * streams)?;
    r.finish()?;
    if flag == 0 {
        if delay != 0 {
            return Err(FormatError::InvalidPayload(format!("plain grid declares delay {delay}")));
        }
        if SpecialIds::for_vocab(vocab)? != specials {
            return Err(FormatError::InvalidPayload("plain grid with non-default special ids".into()));
        }
        Ok(GridFile::Plain(TokenGrid::new(frames, streams, vocab, ids)?))
    } else {
        Ok(GridFile::Delayed(DelayedGrid::from_parts(
            frames, streams, vocab, delay, specials, ids,
        )?))
    }
}

pub fn write_features(m: &FeatureMatrix, path: &Path) -> Result<(), FormatError> {
    Ok(fs::write(path, features_to_bytes(m)?)?)
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix, FormatError> {
    features_from_bytes(&fs::read(path)?)
}

pub fn write_codebooks(set: &CodebookSet, path: &Path) -> Result<(), FormatError> {
    Ok(fs::write(path, codebooks_to_bytes(set)?)?)
}

pub fn read_codebooks(path: &Path) -> Result<CodebookSet, FormatError> {
    codebooks_from_bytes(&fs::read(path)?)
}

pub fn write_grid(grid: &GridFile, path: &Path) -> Result<(), FormatError> {
    Ok(fs::write(path, grid_to_bytes(grid)?)?)
}

pub fn read_grid(path: &Path) -> Result<GridFile, FormatError> {
    grid_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::apply_delay;

    fn matrix() -> FeatureMatrix {
        FeatureMatrix::from_rows(&[[1.0, -2.5, 3.25, 0.0], [1e-30, 7.0, -0.0, 8.5], [9.0, 10.0, 11.0, f32::MAX]])
            .unwrap()
    }

    #[test]
    fn features_round_trip_bit_exact() {
        let m = matrix();
        let bytes = features_to_bytes(&m).unwrap();
        assert_eq!(bytes.len(), 16 + 12 * 4);
        let back = features_from_bytes(&bytes).unwrap();
        let bits = |m: &FeatureMatrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&m));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut bytes = features_to_bytes(&matrix()).unwrap();
        let cut = bytes[..bytes.len() - 3].to_vec();
        assert!(matches!(features_from_bytes(&cut), Err(FormatError::TruncatedFile { .. })));
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(features_from_bytes(&bytes), Err(FormatError::BadMagic { .. })));
        assert!(matches!(features_from_bytes(b"SO"), Err(FormatError::TruncatedFile { .. })));
    }

    #[test]
    fn header_layout_is_little_endian() {
        let bytes = features_to_bytes(&matrix()).unwrap();
        assert_eq!(&bytes[..4], b"SOFM");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[3, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &[4, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
    }

    fn codebooks() -> CodebookSet {
        let books = (0..4)
            .map(|b| Codebook::new(3, 2, (0..6).map(|i| (b * 10 + i) as f32 * 0.5).collect()).unwrap())
            .collect();
        CodebookSet::new(QuantizerKind::Opq, 2, 8, books).unwrap()
    }

    #[test]
    fn codebook_kind_and_version_errors() {
        let bytes = codebooks_to_bytes(&codebooks()).unwrap();
        assert_eq!(codebooks_from_bytes(&bytes).unwrap(), codebooks());
        let mut bad = bytes.clone();
        bad[8] = 7;
        assert!(matches!(codebooks_from_bytes(&bad), Err(FormatError::UnknownKind(7))));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(codebooks_from_bytes(&bad), Err(FormatError::VersionMismatch { found: 2 })));
        let mut bad = bytes;
        bad[10] = 1;
        assert!(matches!(codebooks_from_bytes(&bad), Err(FormatError::NonZeroReserved { .. })));
    }

    #[test]
    fn grid_errors() {
        let g = TokenGrid::from_frames(2, 5, &[vec![0, 1], vec![2, 3], vec![4, 0]]).unwrap();
        let mut bytes = grid_to_bytes(&GridFile::Plain(g.clone())).unwrap();
        assert_eq!(grid_from_bytes(&bytes).unwrap(), GridFile::Plain(g.clone()));
        // first id lives right after the 40-byte header
        bytes[40] = 5;
        assert!(matches!(
            grid_from_bytes(&bytes),
            Err(FormatError::IdOutOfRange { id: 5, frame: 0, stream: 0, .. })
        ));

        let dg = apply_delay(&g, 1);
        let mut bytes = grid_to_bytes(&GridFile::Delayed(dg.clone())).unwrap();
        assert_eq!(grid_from_bytes(&bytes).unwrap(), GridFile::Delayed(dg));
        // frame 0, stream 0 is a token slot; place the pad id there
        bytes[40..44].copy_from_slice(&5u32.to_le_bytes());
        assert!(matches!(grid_from_bytes(&bytes), Err(FormatError::MalformedDelayedGrid { .. })));
        bytes[8] = 2;
        assert!(matches!(grid_from_bytes(&bytes), Err(FormatError::BadDelayedFlag(2))));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = features_to_bytes(&matrix()).unwrap();
        bytes.push(0);
        assert!(matches!(features_from_bytes(&bytes), Err(FormatError::TrailingData { extra: 1 })));
    }
}
