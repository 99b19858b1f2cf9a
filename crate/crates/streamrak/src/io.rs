//! Dataset file formats and the streaming sample reader.
//!
//! Two equivalent on-disk forms: a CSV with header `x1,..,xD,y1[,..,yK]`
//! and a binary record file (magic `SMRD`). Floats in the CSV are printed
//! in Rust's shortest round-trip form, so both formats reproduce exactly.

use crate::bench::BatchDataset;
use crate::error::{Error, Result};
use crate::kernel::PointBlock;
use ndarray::Array2;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

const DATA_MAGIC: &[u8; 4] = b"SMRD";
const DATA_FORMAT_VERSION: u32 = 1;

/// Write a dataset as CSV.
pub fn write_csv<W: Write>(mut w: W, data: &BatchDataset) -> Result<()> {
    let ctx = "writing csv dataset";
    let d = data.points.dim();
    let k = data.targets.ncols();
    let mut header = String::new();
    for i in 0..d {
        if i > 0 {
            header.push(',');
        }
        header.push_str(&format!("x{}", i + 1));
    }
    for j in 0..k {
        header.push(',');
        header.push_str(&format!("y{}", j + 1));
    }
    writeln!(w, "{header}").map_err(|e| Error::io(ctx, e))?;
    for r in 0..data.points.count() {
        let mut line = String::new();
        for (i, v) in data.points.row(r).iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&format!("{v}"));
        }
        for j in 0..k {
            line.push(',');
            line.push_str(&format!("{}", data.targets[(r, j)]));
        }
        writeln!(w, "{line}").map_err(|e| Error::io(ctx, e))?;
    }
    Ok(())
}

/// Write a dataset in the binary record format.
pub fn write_binary<W: Write>(mut w: W, data: &BatchDataset) -> Result<()> {
    let ctx = "writing binary dataset";
    let d = data.points.dim();
    let k = data.targets.ncols();
    let n = data.points.count();
    w.write_all(DATA_MAGIC).map_err(|e| Error::io(ctx, e))?;
    w.write_all(&DATA_FORMAT_VERSION.to_le_bytes())
        .map_err(|e| Error::io(ctx, e))?;
    w.write_all(&(d as u32).to_le_bytes()).map_err(|e| Error::io(ctx, e))?;
    w.write_all(&(k as u32).to_le_bytes()).map_err(|e| Error::io(ctx, e))?;
    w.write_all(&(n as u64).to_le_bytes()).map_err(|e| Error::io(ctx, e))?;
    for r in 0..n {
        for v in data.points.row(r).iter() {
            w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(ctx, e))?;
        }
        for j in 0..k {
            w.write_all(&data.targets[(r, j)].to_le_bytes())
                .map_err(|e| Error::io(ctx, e))?;
        }
    }
    Ok(())
}

/// Save a dataset, choosing the format from the file extension: `.csv` for
/// text, anything else binary.
pub fn save_dataset(path: &Path, data: &BatchDataset) -> Result<()> {
    let file = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let buf = std::io::BufWriter::new(file);
    if path.extension().map(|e| e == "csv").unwrap_or(false) {
        write_csv(buf, data)
    } else {
        write_binary(buf, data)
    }
}

/// Load a whole dataset from a file in either format (sniffed by magic).
pub fn load_dataset(path: &Path) -> Result<BatchDataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut reader = SampleReader::new(BufReader::new(file))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut targets: Vec<Vec<f64>> = Vec::new();
    while let Some(rec) = reader.next_sample()? {
        rows.push(rec.0);
        targets.push(rec.1);
    }
    if rows.is_empty() {
        return Err(Error::data(format!("{}: no samples", path.display())));
    }
    let d = reader.dim();
    let k = reader.outputs();
    let points = PointBlock::from_rows(&rows, d)?;
    let mut t = Array2::zeros((targets.len(), k));
    for (i, row) in targets.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            t[(i, j)] = *v;
        }
    }
    BatchDataset::new(points, t)
}

enum ReaderKind<R: BufRead> {
    Csv { inner: R, line: String },
    Binary { inner: R, remaining: u64 },
}

/// Incremental reader over either dataset format; yields one
/// `(point, targets)` record at a time with blocking reads, so it applies
/// back-pressure naturally when fed from a pipe.
pub struct SampleReader<R: BufRead> {
    kind: ReaderKind<R>,
    dim: usize,
    outputs: usize,
    row: u64,
}

impl<R: BufRead> SampleReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let head = inner
            .fill_buf()
            .map_err(|e| Error::io("reading dataset header", e))?;
        if head.starts_with(DATA_MAGIC) {
            let mut hdr = [0u8; 24];
            inner
                .read_exact(&mut hdr)
                .map_err(|e| Error::io("reading binary dataset header", e))?;
            let version = u32::from_le_bytes(hdr[4..8].try_into().unwrap());
            if version != DATA_FORMAT_VERSION {
                return Err(Error::data(format!(
                    "unsupported dataset format version {version}"
                )));
            }
            let dim = u32::from_le_bytes(hdr[8..12].try_into().unwrap()) as usize;
            let outputs = u32::from_le_bytes(hdr[12..16].try_into().unwrap()) as usize;
            let remaining = u64::from_le_bytes(hdr[16..24].try_into().unwrap());
            if dim == 0 || outputs == 0 {
                return Err(Error::data("dataset header declares zero dimensions"));
            }
            Ok(SampleReader {
                kind: ReaderKind::Binary { inner, remaining },
                dim,
                outputs,
                row: 0,
            })
        } else {
            let mut header = String::new();
            inner
                .read_line(&mut header)
                .map_err(|e| Error::io("reading csv header", e))?;
            let cols: Vec<&str> = header.trim().split(',').collect();
            let dim = cols.iter().take_while(|c| c.starts_with('x')).count();
            let outputs = cols.len() - dim;
            if dim == 0 || outputs == 0 || !cols[dim..].iter().all(|c| c.starts_with('y')) {
                return Err(Error::data(format!(
                    "csv header must be x1..xD,y1..yK, got `{}`",
                    header.trim()
                )));
            }
            Ok(SampleReader {
                kind: ReaderKind::Csv {
                    inner,
                    line: String::new(),
                },
                dim,
                outputs,
                row: 0,
            })
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    /// Next record, or `None` at end of stream.
    #[allow(clippy::type_complexity)]
    pub fn next_sample(&mut self) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
        self.row += 1;
        match &mut self.kind {
            ReaderKind::Csv { inner, line } => {
                line.clear();
                let n = inner
                    .read_line(line)
                    .map_err(|e| Error::io("reading csv record", e))?;
                if n == 0 || line.trim().is_empty() {
                    return Ok(None);
                }
                let fields: Vec<&str> = line.trim().split(',').collect();
                if fields.len() != self.dim + self.outputs {
                    return Err(Error::data(format!(
                        "csv row {}: {} fields, expected {}",
                        self.row,
                        fields.len(),
                        self.dim + self.outputs
                    )));
                }
                let parse = |s: &str| -> Result<f64> {
                    s.parse::<f64>().map_err(|_| {
                        Error::data(format!("csv row {}: bad number `{s}`", self.row))
                    })
                };
                let point = fields[..self.dim]
                    .iter()
                    .map(|s| parse(s))
                    .collect::<Result<Vec<_>>>()?;
                let targets = fields[self.dim..]
                    .iter()
                    .map(|s| parse(s))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Some((point, targets)))
            }
            ReaderKind::Binary { inner, remaining } => {
                if *remaining == 0 {
                    return Ok(None);
                }
                let want = (self.dim + self.outputs) * 8;
                let mut buf = vec![0u8; want];
                inner
                    .read_exact(&mut buf)
                    .map_err(|e| Error::io(format!("reading binary record {}", self.row), e))?;
                *remaining -= 1;
                let mut vals = Vec::with_capacity(self.dim + self.outputs);
                for c in buf.chunks_exact(8) {
                    vals.push(f64::from_le_bytes(c.try_into().unwrap()));
                }
                let targets = vals.split_off(self.dim);
                Ok(Some((vals, targets)))
            }
        }
    }
}
