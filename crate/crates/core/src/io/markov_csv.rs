//! Markov model counts as CSV.
//!
//! One row per stored count:
//! `order,streams,delay,vocab,smoothing,stream,context,token,count`, where
//! `context` is the flattened context frames as space-separated ids (empty
//! for the order-0 context). The model fields repeat on every row.

use std::io::{Read, Write};
use std::path::Path;

use super::FormatError;
use crate::lmsim::MarkovModel;

const HEADER: [&str; 9] = [
    "order",
    "streams",
    "delay",
    "vocab",
    "smoothing",
    "stream",
    "context",
    "token",
    "count",
];

fn csv_err(e: csv::Error) -> FormatError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => FormatError::Io(io),
            _ => unreachable!(),
        }
    } else {
        FormatError::InvalidPayload(e.to_string())
    }
}

pub fn write_markov<W: Write>(model: &MarkovModel, w: W) -> Result<(), FormatError> {
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    out.write_record(HEADER).map_err(csv_err)?;
    let meta = [
        model.order().to_string(),
        model.streams().to_string(),
        model.delay().to_string(),
        model.vocab().to_string(),
        model.smoothing().to_string(),
    ];
    for (stream, ctx, id, count) in model.entries() {
        let ctx: Vec<String> = ctx.iter().map(u32::to_string).collect();
        let mut row = meta.to_vec();
        row.extend([stream.to_string(), ctx.join(" "), id.to_string(), count.to_string()]);
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_markov<R: Read>(r: R) -> Result<MarkovModel, FormatError> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rd.headers().map_err(csv_err)?.clone();
    if header.iter().ne(HEADER) {
        return Err(FormatError::InvalidPayload(format!("unexpected Markov CSV header {header:?}")));
    }
    let bad = |line: usize, what: &str| FormatError::InvalidPayload(format!("row {line}: bad {what}"));
    let mut meta: Option<(usize, usize, usize, u32, String)> = None;
    let mut entries = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i + 2;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let int = |c: usize| field(c).parse::<usize>().map_err(|_| bad(line, HEADER[c]));
        let this = (
            int(0)?,
            int(1)?,
            int(2)?,
            field(3).parse::<u32>().map_err(|_| bad(line, "vocab"))?,
            field(4).to_string(),
        );
        match &meta {
            None => meta = Some(this),
            Some(m) if *m != this => return Err(bad(line, "model fields (differ from the first row)")),
            _ => {}
        }
        let ctx = field(6)
            .split_whitespace()
            .map(|t| t.parse::<u32>().map_err(|_| bad(line, "context")))
            .collect::<Result<Vec<_>, _>>()?;
        let token = field(7).parse::<u32>().map_err(|_| bad(line, "token"))?;
        let count = field(8).parse::<u64>().map_err(|_| bad(line, "count"))?;
        entries.push((int(5)?, ctx, token, count));
    }
    let (order, streams, delay, vocab, smoothing) =
        meta.ok_or_else(|| FormatError::InvalidPayload("Markov CSV has no rows".into()))?;
    let smoothing: f64 = smoothing
        .parse()
        .map_err(|_| FormatError::InvalidPayload("bad smoothing".into()))?;
    MarkovModel::from_entries(order, streams, delay, vocab, smoothing, entries).map_err(FormatError::InvalidPayload)
}

pub fn save_markov(model: &MarkovModel, path: &Path) -> Result<(), FormatError> {
    let mut buf = Vec::new();
    write_markov(model, &mut buf)?;
    Ok(std::fs::write(path, buf)?)
}

pub fn load_markov(path: &Path) -> Result<MarkovModel, FormatError> {
    read_markov(std::fs::File::open(path)?)
}
