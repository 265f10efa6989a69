//! Candidate pools: embeddings, optional objective labels and identifiers,
//! plus the CSV and binary on-disk formats.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! b"GLBO" | version: u16 = 1 | n: u64 | d: u64 | flags: u8 (bit0 = labels)
//! n*d f32 row-major embeddings
//! n f64 labels (only when bit0 is set)
//! UTF-8 JSON trailer {"ids": [...], "meta": {...}} to end of file
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

pub const MAGIC: &[u8; 4] = b"GLBO";
pub const BINARY_VERSION: u16 = 1;
const FLAG_LABELS: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolFormat {
    Csv,
    Binary,
}

impl PoolFormat {
    /// Guesses the format from a file extension; anything but `.csv` is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => PoolFormat::Csv,
            _ => PoolFormat::Binary,
        }
    }
}

impl FromStr for PoolFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(PoolFormat::Csv),
            "binary" | "bin" => Ok(PoolFormat::Binary),
            other => Err(Error::Invalid(format!("unknown pool format {other:?}"))),
        }
    }
}

/// The discrete design space. Immutable once constructed.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidatePool {
    ids: Vec<String>,
    x: Matrix<f64>,
    y: Option<Vec<f64>>,
    meta: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Trailer {
    ids: Vec<String>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

impl CandidatePool {
    /// Validates and builds a pool.
    pub fn new(ids: Vec<String>, x: Matrix<f64>, y: Option<Vec<f64>>, meta: BTreeMap<String, String>) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::InsufficientData("pool must contain at least one row".into()));
        }
        if x.ncols() == 0 {
            return Err(Error::Format { row: 1, msg: "embedding dimension must be at least 1".into() });
        }
        if ids.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: ids.len() });
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        for (i, row) in x.rows().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data { id: ids[i].clone(), msg: "non-finite embedding value".into() });
            }
        }
        if let Some(y) = &y {
            if y.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: y.len() });
            }
            if let Some(i) = y.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data { id: ids[i].clone(), msg: "non-finite label".into() });
            }
        }
        Ok(Self { ids, x, y, meta })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn x(&self) -> &Matrix<f64> {
        &self.x
    }

    pub fn y(&self) -> Option<&[f64]> {
        self.y.as_deref()
    }

    pub fn labels(&self) -> Result<&[f64]> {
        self.y().ok_or(Error::Unlabeled)
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|s| s == id)
    }

    /// Embeddings converted to the working scalar type.
    pub fn features<T: Real>(&self) -> Matrix<T> {
        self.x.cast()
    }

    /// Same pool with labels dropped.
    pub fn without_labels(&self) -> Self {
        Self { y: None, ..self.clone() }
    }

    /// Same pool with new labels (validated).
    pub fn with_labels(&self, y: Vec<f64>) -> Result<Self> {
        Self::new(self.ids.clone(), self.x.clone(), Some(y), self.meta.clone())
    }

    /// Same pool with new embeddings (validated).
    pub fn with_features(&self, x: Matrix<f64>) -> Result<Self> {
        Self::new(self.ids.clone(), x, self.y.clone(), self.meta.clone())
    }

    /// Per-dimension min-max scaling to [0, 1]; constant columns map to 0.
    pub fn minmax_scaled(&self) -> Self {
        let (n, d) = (self.len(), self.dim());
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for row in self.x.rows() {
            for j in 0..d {
                lo[j] = lo[j].min(row[j]);
                hi[j] = hi[j].max(row[j]);
            }
        }
        let x = Matrix::from_fn(n, d, |i, j| {
            let span = hi[j] - lo[j];
            if span > 0.0 {
                (self.x[(i, j)] - lo[j]) / span
            } else {
                0.0
            }
        });
        Self { x, ..self.clone() }.with_meta("scaling", "minmax")
    }
}

pub fn load_pool(path: impl AsRef<Path>, format: PoolFormat) -> Result<CandidatePool> {
    let path = path.as_ref();
    match format {
        PoolFormat::Csv => read_csv(BufReader::new(File::open(path)?)),
        PoolFormat::Binary => {
            let mut buf = Vec::new();
            File::open(path)?.read_to_end(&mut buf)?;
            decode_binary(&buf)
        }
    }
}

pub fn save_pool(pool: &CandidatePool, path: impl AsRef<Path>, format: PoolFormat) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    match format {
        PoolFormat::Csv => write_csv(pool, &mut w)?,
        PoolFormat::Binary => w.write_all(&encode_binary(pool)?)?,
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(reader: R) -> Result<CandidatePool> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.get(0).map(str::trim) != Some("id") {
        return Err(Error::Format { row: 0, msg: "header must start with `id`".into() });
    }
    let has_y = header.len() > 1 && header.get(header.len() - 1).map(str::trim) == Some("y");
    let d = header.len() - 1 - usize::from(has_y);
    if d == 0 {
        return Err(Error::Format { row: 0, msg: "no embedding columns".into() });
    }
    for j in 0..d {
        let name = header.get(j + 1).unwrap_or("").trim();
        if name != format!("e{j}") {
            return Err(Error::Format { row: 0, msg: format!("expected column `e{j}`, found `{name}`") });
        }
    }
    let width = header.len();
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut ys = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        if rec.len() != width {
            return Err(Error::Format { row, msg: format!("expected {width} fields, found {}", rec.len()) });
        }
        let id = rec[0].to_string();
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|e| Error::Format { row, msg: format!("bad number {s:?}: {e}") })
        };
        for j in 0..d {
            data.push(parse(&rec[j + 1])?);
        }
        if has_y {
            ys.push(parse(&rec[width - 1])?);
        }
        ids.push(id);
    }
    let n = ids.len();
    CandidatePool::new(ids, Matrix::from_vec(n, d, data), has_y.then_some(ys), BTreeMap::new())
}

pub fn write_csv<W: Write>(pool: &CandidatePool, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string()];
    header.extend((0..pool.dim()).map(|j| format!("e{j}")));
    if pool.y.is_some() {
        header.push("y".into());
    }
    w.write_record(&header)?;
    for (i, row) in pool.x.rows().enumerate() {
        let mut rec = Vec::with_capacity(header.len());
        rec.push(pool.ids[i].clone());
        rec.extend(row.iter().map(|v| v.to_string()));
        if let Some(y) = &pool.y {
            rec.push(y[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn encode_binary(pool: &CandidatePool) -> Result<Vec<u8>> {
    let (n, d) = (pool.len(), pool.dim());
    let mut out = Vec::with_capacity(23 + n * d * 4 + n * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    out.push(if pool.y.is_some() { FLAG_LABELS } else { 0 });
    for &v in pool.x.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    if let Some(y) = &pool.y {
        for &v in y {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let trailer = Trailer { ids: pool.ids.clone(), meta: pool.meta.clone() };
    serde_json::to_writer(&mut out, &trailer)?;
    Ok(out)
}

pub fn decode_binary(buf: &[u8]) -> Result<CandidatePool> {
    let bad = |msg: &str| Error::Format { row: 0, msg: msg.to_string() };
    let mut cur = Cursor { buf, pos: 0 };
    if cur.take(4).ok_or_else(|| bad("truncated header"))? != MAGIC {
        return Err(bad("bad magic bytes"));
    }
    let version = u16::from_le_bytes(cur.array().ok_or_else(|| bad("truncated header"))?);
    if version != BINARY_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(cur.array().ok_or_else(|| bad("truncated header"))?) as usize;
    let d = u64::from_le_bytes(cur.array().ok_or_else(|| bad("truncated header"))?) as usize;
    let flags = cur.take(1).ok_or_else(|| bad("truncated header"))?[0];
    let cells = n.checked_mul(d).ok_or_else(|| bad("size overflow"))?;
    let mut data = Vec::with_capacity(cells.min(buf.len() / 4));
    for k in 0..cells {
        let v = f32::from_le_bytes(
            cur.array()
                .ok_or_else(|| Error::Format { row: k / d.max(1) + 1, msg: "truncated embedding block".into() })?,
        );
        data.push(f64::from(v));
    }
    let y = if flags & FLAG_LABELS != 0 {
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let v = f64::from_le_bytes(
                cur.array().ok_or_else(|| Error::Format { row: i + 1, msg: "truncated label block".into() })?,
            );
            y.push(v);
        }
        Some(y)
    } else {
        None
    };
    let trailer: Trailer =
        serde_json::from_slice(&buf[cur.pos..]).map_err(|e| bad(&format!("bad JSON trailer: {e}")))?;
    if trailer.ids.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: trailer.ids.len() });
    }
    CandidatePool::new(trailer.ids, Matrix::from_vec(n, d, data), y, trailer.meta)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, k: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos + k)?;
        self.pos += k;
        Some(s)
    }

    fn array<const N: usize>(&mut self) -> Option<[u8; N]> {
        self.take(N).map(|s| s.try_into().unwrap())
    }
}

/// Affine map between raw objective values and the zero-mean, unit-variance
/// scale the GP is fitted on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub y_mean: f64,
    pub y_std: f64,
    /// Set when the input was constant and `y_std` fell back to 1.
    pub degenerate: bool,
}

impl Standardizer {
    pub fn identity() -> Self {
        Self { y_mean: 0.0, y_std: 1.0, degenerate: false }
    }

    pub fn transform<T: Real>(&self, v: T) -> T {
        (v - T::lit(self.y_mean)) / T::lit(self.y_std)
    }

    pub fn inverse<T: Real>(&self, v: T) -> T {
        v * T::lit(self.y_std) + T::lit(self.y_mean)
    }

    /// Maps a variance from the standardized scale back to raw units.
    pub fn inverse_variance<T: Real>(&self, v: T) -> T {
        v * T::lit(self.y_std * self.y_std)
    }
}

/// Zero-mean, unit sample-variance targets. Constant input keeps `y_std = 1`
/// and sets the degenerate flag.
pub fn standardize_targets<T: Real>(y: &[T]) -> Result<(Vec<T>, Standardizer)> {
    if y.len() < 2 {
        return Err(Error::InsufficientData(format!("standardization needs at least 2 targets, got {}", y.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite target".into()));
    }
    let n = y.len() as f64;
    let mean = y.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n;
    let var = y.iter().map(|v| (v.to_f64_lossy() - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    let s = if std > 1e-12 * mean.abs().max(1.0) {
        Standardizer { y_mean: mean, y_std: std, degenerate: false }
    } else {
        Standardizer { y_mean: mean, y_std: 1.0, degenerate: true }
    };
    Ok((y.iter().map(|&v| s.transform(v)).collect(), s))
}
