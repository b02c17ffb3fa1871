//! Embedding and label files.
//!
//! Binary embeddings: `"PULF"`, u32 version, u64 rows, u64 cols, then
//! `rows * cols` little-endian f32 values in row-major order.
//!
//! Binary labels: `"PULL"`, u32 version, u64 n, u32 num_classes, then `n`
//! little-endian u32 labels.
//!
//! CSV embeddings are comma-separated rows without a header unless
//! [`ReadOptions::csv_header`] is set. CSV labels hold one label per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use super::{FeatureMatrix, LabelVector};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"PULF";
pub const LABEL_MAGIC: &[u8; 4] = b"PULL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    #[default]
    Binary,
    Csv,
}

impl FileFormat {
    /// `.csv` files are CSV, everything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => FileFormat::Csv,
            _ => FileFormat::Binary,
        }
    }
}

impl FromStr for FileFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" | "bin" => Ok(FileFormat::Binary),
            "csv" => Ok(FileFormat::Csv),
            other => Err(Error::invalid(format!(
                "unknown format {other:?} (expected binary or csv)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReadOptions {
    /// Skip the first CSV line.
    pub csv_header: bool,
    /// Class count for CSV label files; defaults to `max(label) + 1`.
    pub num_classes: Option<usize>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn header_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

struct Header<'a, R> {
    path: &'a Path,
    reader: R,
}

impl<R: Read> Header<'_, R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.reader
            .read_exact(&mut buf)
            .map_err(|_| header_err(self.path, format!("truncated while reading {what}")))?;
        Ok(buf)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let m = self.bytes::<4>("magic")?;
        if &m != expected {
            return Err(header_err(
                self.path,
                format!("bad magic {:?}, expected {:?}", m, expected),
            ));
        }
        let version = u32::from_le_bytes(self.bytes::<4>("version")?);
        if version != FORMAT_VERSION {
            return Err(header_err(self.path, format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes::<4>(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes::<8>(what)?))
    }
}

pub fn load_features(path: &Path, format: FileFormat, opts: ReadOptions) -> Result<FeatureMatrix> {
    match format {
        FileFormat::Binary => load_features_binary(path),
        FileFormat::Csv => load_features_csv(path, opts.csv_header),
    }
}

fn load_features_binary(path: &Path) -> Result<FeatureMatrix> {
    let mut h = Header {
        path,
        reader: open(path)?,
    };
    h.magic(FEATURE_MAGIC)?;
    let rows = h.u64("rows")? as usize;
    let cols = h.u64("cols")? as usize;
    if rows == 0 || cols < 2 {
        return Err(header_err(path, format!("invalid shape {rows}x{cols}")));
    }
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| header_err(path, "shape overflows"))?;
    let mut payload = Vec::new();
    h.reader
        .read_to_end(&mut payload)
        .map_err(|e| Error::io(path, e))?;
    if payload.len() != count * 4 {
        return Err(Error::DimensionMismatch {
            context: "binary feature payload bytes",
            expected: count * 4,
            found: payload.len(),
        });
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    FeatureMatrix::new(rows, cols, values)
}

fn load_features_csv(path: &Path, skip_header: bool) -> Result<FeatureMatrix> {
    let reader = open(path)?;
    let mut values = Vec::new();
    let mut cols: Option<usize> = None;
    let mut rows = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if lineno == 0 && skip_header {
            continue;
        }
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut n = 0;
        for (c, field) in trimmed.split(',').enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row: rows,
                col: c,
                reason: format!("not a number: {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row: rows, col: c });
            }
            values.push(v);
            n += 1;
        }
        match cols {
            None => cols = Some(n),
            Some(expected) if expected != n => {
                return Err(Error::DimensionMismatch {
                    context: "csv row width",
                    expected,
                    found: n,
                })
            }
            _ => {}
        }
        rows += 1;
    }
    FeatureMatrix::new(rows, cols.unwrap_or(0), values)
}

pub fn save_features(m: &FeatureMatrix, path: &Path, format: FileFormat) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    match format {
        FileFormat::Binary => {
            w.write_all(FEATURE_MAGIC).map_err(io)?;
            w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
            w.write_all(&(m.rows() as u64).to_le_bytes()).map_err(io)?;
            w.write_all(&(m.cols() as u64).to_le_bytes()).map_err(io)?;
            for &v in m.as_slice() {
                w.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
            }
        }
        FileFormat::Csv => {
            for row in m.iter_rows() {
                let line = row
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(",");
                writeln!(w, "{line}").map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

pub fn load_labels(path: &Path, format: FileFormat, opts: ReadOptions) -> Result<LabelVector> {
    match format {
        FileFormat::Binary => {
            let mut h = Header {
                path,
                reader: open(path)?,
            };
            h.magic(LABEL_MAGIC)?;
            let n = h.u64("n")? as usize;
            let num_classes = h.u32("num_classes")? as usize;
            let mut payload = Vec::new();
            h.reader
                .read_to_end(&mut payload)
                .map_err(|e| Error::io(path, e))?;
            if payload.len() != n * 4 {
                return Err(Error::DimensionMismatch {
                    context: "binary label payload bytes",
                    expected: n * 4,
                    found: payload.len(),
                });
            }
            let labels = payload
                .chunks_exact(4)
                .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
                .collect();
            LabelVector::new(labels, num_classes)
        }
        FileFormat::Csv => {
            let reader = open(path)?;
            let mut labels = Vec::new();
            for (lineno, line) in reader.lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if lineno == 0 && opts.csv_header {
                    continue;
                }
                let t = line.trim();
                if t.is_empty() {
                    continue;
                }
                let l: usize = t.parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    row: labels.len(),
                    col: 0,
                    reason: format!("not a label: {t:?}"),
                })?;
                labels.push(l);
            }
            let m = opts
                .num_classes
                .unwrap_or_else(|| labels.iter().max().map_or(1, |&l| l + 1));
            LabelVector::new(labels, m)
        }
    }
}

pub fn save_labels(labels: &LabelVector, path: &Path, format: FileFormat) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    match format {
        FileFormat::Binary => {
            w.write_all(LABEL_MAGIC).map_err(io)?;
            w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
            w.write_all(&(labels.len() as u64).to_le_bytes()).map_err(io)?;
            w.write_all(&(labels.num_classes() as u32).to_le_bytes())
                .map_err(io)?;
            for &l in labels.as_slice() {
                w.write_all(&(l as u32).to_le_bytes()).map_err(io)?;
            }
        }
        FileFormat::Csv => {
            for &l in labels.as_slice() {
                writeln!(w, "{l}").map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}
