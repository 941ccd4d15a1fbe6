//! Time-ordered training/test series, CSV ingestion and delay-coordinate
//! embedding.
//!
//! A series file is a CSV with a header row. Observation columns are named
//! `y0 … y{d-1}` and the forecast observable is `f`. The sampling interval
//! lives in a sidecar `<stem>.meta.json` (`{"dt": 0.05, "d": 9}`).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{QmdaError, Result};
use crate::linalg::Mat;

/// Observations `y_n ∈ ℝ^d` and forecast-observable values `f_n` sampled at
/// a fixed interval `dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySeries {
    dt: f64,
    y: Mat,
    f: Vec<f64>,
}

impl TrajectorySeries {
    pub fn new(dt: f64, y: Mat, f: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(QmdaError::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        if y.rows() != f.len() {
            return Err(QmdaError::DimensionMismatch(format!(
                "{} observation rows but {} forecast values",
                y.rows(),
                f.len()
            )));
        }
        if y.rows() == 0 {
            return Err(QmdaError::Empty("series has no samples".into()));
        }
        for n in 0..y.rows() {
            if !f[n].is_finite() || y.row(n).iter().any(|v| !v.is_finite()) {
                return Err(QmdaError::NonFinite { row: n });
            }
        }
        Ok(TrajectorySeries { dt, y, f })
    }

    pub fn from_rows(dt: f64, y: &[Vec<f64>], f: Vec<f64>) -> Result<Self> {
        let y = Mat::from_rows(y)?;
        Self::new(dt, y, f)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Ñ, the number of samples.
    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    /// Observation dimension d.
    pub fn dim(&self) -> usize {
        self.y.cols()
    }

    pub fn y(&self) -> &Mat {
        &self.y
    }

    pub fn y_at(&self, n: usize) -> &[f64] {
        self.y.row(n)
    }

    pub fn f(&self) -> &[f64] {
        &self.f
    }

    /// Samples `start..end` as a new series.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(QmdaError::InvalidParameter(format!(
                "slice {start}..{end} of a length-{} series",
                self.len()
            )));
        }
        let d = self.dim();
        let y = Mat::from_vec(
            end - start,
            d,
            self.y.as_slice()[start * d..end * d].to_vec(),
        )?;
        Self::new(self.dt, y, self.f[start..end].to_vec())
    }
}

/// Delay-coordinate embedding `z_n = (y_n, …, y_{n+2Q})`, centred on the
/// original index `n + Q`.
#[derive(Clone, Debug)]
pub struct DelayEmbeddedSeries {
    delays: usize,
    z: Mat,
    f: Vec<f64>,
    y_center: Mat,
}

impl DelayEmbeddedSeries {
    pub fn delays(&self) -> usize {
        self.delays
    }

    /// N = Ñ − 2Q.
    pub fn len(&self) -> usize {
        self.z.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.rows() == 0
    }

    /// Index in the source series that `z_n` is centred on, minus `n`.
    pub fn offset(&self) -> usize {
        self.delays
    }

    pub fn z(&self) -> &Mat {
        &self.z
    }

    /// Forecast observable cropped to the window centres.
    pub fn f(&self) -> &[f64] {
        &self.f
    }

    /// Raw observations at the window centres, `y_{n+Q}`.
    pub fn y_center(&self) -> &Mat {
        &self.y_center
    }

    /// Block `q` of `z_n`, which is `y_{n+q}` of the source series.
    pub fn block(&self, n: usize, q: usize) -> &[f64] {
        let d = self.y_center.cols();
        &self.z.row(n)[q * d..(q + 1) * d]
    }
}

pub fn delay_embed(series: &TrajectorySeries, delays: usize) -> Result<DelayEmbeddedSeries> {
    let total = series.len();
    let window = 2 * delays + 1;
    if total < window {
        return Err(QmdaError::InsufficientData(format!(
            "{total} samples cannot hold a delay window of {window}"
        )));
    }
    let n = total - 2 * delays;
    let d = series.dim();
    let src = series.y().as_slice();
    // rows of z are contiguous runs of the row-major source
    let mut z = Vec::with_capacity(n * window * d);
    for start in 0..n {
        z.extend_from_slice(&src[start * d..(start + window) * d]);
    }
    let z = Mat::from_vec(n, window * d, z)?;
    let y_center = Mat::from_vec(n, d, src[delays * d..(delays + n) * d].to_vec())?;
    let f = series.f()[delays..delays + n].to_vec();
    Ok(DelayEmbeddedSeries {
        delays,
        z,
        f,
        y_center,
    })
}

/// Column layout of a series CSV.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesSchema {
    /// Name of the forecast-observable column.
    pub f_column: String,
    /// Observation columns, in order. `None` selects every column whose name
    /// starts with `y`, in header order.
    pub y_columns: Option<Vec<String>>,
}

impl Default for SeriesSchema {
    fn default() -> Self {
        SeriesSchema {
            f_column: "f".into(),
            y_columns: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub dt: f64,
    pub d: usize,
}

pub fn meta_path(csv_path: &Path) -> PathBuf {
    let stem = csv_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    csv_path.with_file_name(format!("{stem}.meta.json"))
}

pub fn load_series(path: &Path, schema: &SeriesSchema) -> Result<TrajectorySeries> {
    let meta_file = meta_path(path);
    let meta_text =
        std::fs::read_to_string(&meta_file).map_err(|e| QmdaError::io(&meta_file, e))?;
    let meta: SeriesMeta = serde_json::from_str(&meta_text)
        .map_err(|e| QmdaError::Malformed(format!("{}: {e}", meta_file.display())))?;

    let file = File::open(path).map_err(|e| QmdaError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| QmdaError::Malformed(format!("{}: {e}", path.display())))?
        .clone();
    let position = |name: &str| headers.iter().position(|h| h.trim() == name);
    let f_idx = position(&schema.f_column).ok_or_else(|| {
        QmdaError::Malformed(format!("missing column '{}'", schema.f_column))
    })?;
    let y_idx: Vec<usize> = match &schema.y_columns {
        Some(cols) => cols
            .iter()
            .map(|c| position(c).ok_or_else(|| QmdaError::Malformed(format!("missing column '{c}'"))))
            .collect::<Result<_>>()?,
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, h)| *i != f_idx && h.trim().starts_with('y'))
            .map(|(i, _)| i)
            .collect(),
    };
    if y_idx.len() != meta.d {
        return Err(QmdaError::DimensionMismatch(format!(
            "metadata declares d={} but the file has {} observation columns",
            meta.d,
            y_idx.len()
        )));
    }

    let mut y = Vec::new();
    let mut f = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| QmdaError::Malformed(format!("row {row}: {e}")))?;
        if record.len() != headers.len() {
            return Err(QmdaError::DimensionMismatch(format!(
                "row {row} has {} fields, header has {}",
                record.len(),
                headers.len()
            )));
        }
        let parse = |i: usize| -> Result<f64> {
            let v: f64 = record[i].trim().parse().map_err(|_| {
                QmdaError::Malformed(format!("row {row}: cannot parse '{}'", &record[i]))
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(QmdaError::NonFinite { row })
            }
        };
        for &i in &y_idx {
            y.push(parse(i)?);
        }
        f.push(parse(f_idx)?);
    }
    if f.is_empty() {
        return Err(QmdaError::Empty(format!("{} has no data rows", path.display())));
    }
    let y = Mat::from_vec(f.len(), meta.d, y)?;
    TrajectorySeries::new(meta.dt, y, f)
}

/// Writes the CSV and its sidecar metadata. Values use the shortest
/// representation that round-trips exactly.
pub fn save_series(path: &Path, series: &TrajectorySeries) -> Result<()> {
    let file = File::create(path).map_err(|e| QmdaError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| QmdaError::io(path, e);
    let d = series.dim();
    let header: Vec<String> = (0..d).map(|i| format!("y{i}")).chain(["f".to_string()]).collect();
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    let mut line = String::new();
    for n in 0..series.len() {
        line.clear();
        for v in series.y_at(n) {
            line.push_str(&v.to_string());
            line.push(',');
        }
        line.push_str(&series.f()[n].to_string());
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)?;

    let meta = SeriesMeta { dt: series.dt(), d };
    let meta_file = meta_path(path);
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    std::fs::write(&meta_file, text + "\n").map_err(|e| QmdaError::io(&meta_file, e))?;
    Ok(())
}
