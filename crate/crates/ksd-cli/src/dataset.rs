//! Dataset ingestion and the RBM target file format.
//!
//! Two on-disk sample formats are accepted:
//!
//! - `csv`: numeric cells only, one row per observation, no header;
//! - `raw-f64-le`: a 16-byte header of two little-endian u64 (n, then d)
//!   followed by n·d little-endian IEEE-754 f64 values, row-major.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ksd::{SampleSet, ScoreModel};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

/// Supported dataset encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DatasetFormat {
    Csv,
    #[value(name = "raw-f64-le")]
    RawF64Le,
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Csv => write!(f, "csv"),
            Self::RawF64Le => write!(f, "raw-f64-le"),
        }
    }
}

/// Errors that map to the data-error exit code.
#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Malformed { path: String, message: String },
    #[error("{path}: non-finite value at row {row}, column {col}")]
    NonFinite {
        path: String,
        row: usize,
        col: usize,
    },
    #[error("{path}: empty dataset")]
    Empty { path: String },
}

/// Reads a dataset file into a validated sample set.
pub fn ingest_dataset(path: &Path, format: DatasetFormat) -> Result<SampleSet, DataError> {
    let rows = match format {
        DatasetFormat::Csv => read_csv(path)?,
        DatasetFormat::RawF64Le => read_raw(path)?,
    };
    let path_str = path.display().to_string();
    if rows.is_empty() {
        return Err(DataError::Empty { path: path_str });
    }
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(DataError::NonFinite {
                    path: path_str,
                    row: i,
                    col: j,
                });
            }
        }
    }
    SampleSet::from_rows(&rows).map_err(|e| DataError::Malformed {
        path: path_str,
        message: e.to_string(),
    })
}

fn read_csv(path: &Path) -> Result<Vec<Vec<f64>>, DataError> {
    let path_str = path.display().to_string();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path_str.clone(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_reader(BufReader::new(file));
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DataError::Malformed {
            path: path_str.clone(),
            message: e.to_string(),
        })?;
        let mut row = Vec::with_capacity(record.len());
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| DataError::Malformed {
                path: path_str.clone(),
                message: format!("row {i}, column {j}: not a number: {cell:?}"),
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    Ok(rows)
}

fn read_raw(path: &Path) -> Result<Vec<Vec<f64>>, DataError> {
    let path_str = path.display().to_string();
    let io_err = |source| DataError::Io {
        path: path_str.clone(),
        source,
    };
    let mut reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut header = [0u8; 16];
    reader.read_exact(&mut header).map_err(|_| DataError::Malformed {
        path: path_str.clone(),
        message: "missing 16-byte header".into(),
    })?;
    let n = u64::from_le_bytes(header[..8].try_into().unwrap()) as usize;
    let d = u64::from_le_bytes(header[8..].try_into().unwrap()) as usize;
    if n == 0 || d == 0 {
        return Err(DataError::Empty { path: path_str });
    }
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| DataError::Malformed {
            path: path_str.clone(),
            message: format!("header declares an oversized table ({n}×{d})"),
        })?;
    let mut payload = Vec::with_capacity(expected);
    reader
        .read_to_end(&mut payload)
        .map_err(|source| DataError::Io {
            path: path_str.clone(),
            source,
        })?;
    if payload.len() != expected {
        return Err(DataError::Malformed {
            path: path_str.clone(),
            message: format!(
                "header declares {n}×{d} values ({expected} bytes) but payload has {} bytes",
                payload.len()
            ),
        });
    }
    let mut rows = Vec::with_capacity(n);
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    for _ in 0..n {
        rows.push(values.by_ref().take(d).collect());
    }
    Ok(rows)
}

/// Writes a sample set in `raw-f64-le` layout.
pub fn write_raw(path: &Path, samples: &SampleSet) -> std::io::Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    writer.write_all(&(samples.n() as u64).to_le_bytes())?;
    writer.write_all(&(samples.dim() as u64).to_le_bytes())?;
    for i in 0..samples.n() {
        for v in samples.row(i) {
            writer.write_all(&v.to_le_bytes())?;
        }
    }
    writer.flush()
}

/// Writes a sample set as headerless CSV.
pub fn write_csv(path: &Path, samples: &SampleSet) -> std::io::Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    for i in 0..samples.n() {
        let row: Vec<String> = samples.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(writer, "{}", row.join(","))?;
    }
    writer.flush()
}

/// On-disk RBM target description.
#[derive(Debug, Serialize, Deserialize)]
pub struct RbmFile {
    /// Coupling matrix, d_hidden × d_visible, one inner array per hidden unit.
    #[serde(rename = "B")]
    pub b_matrix: Vec<Vec<f64>>,
    /// Visible bias.
    pub b: Vec<f64>,
    /// Hidden bias.
    pub c_bias: Vec<f64>,
}

/// Loads an RBM score model from its JSON description.
pub fn load_rbm(path: &Path) -> Result<ScoreModel, DataError> {
    let path_str = path.display().to_string();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path_str.clone(),
        source,
    })?;
    let parsed: RbmFile =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| DataError::Malformed {
            path: path_str.clone(),
            message: e.to_string(),
        })?;
    let d_hidden = parsed.b_matrix.len();
    let d_visible = parsed.b_matrix.first().map_or(0, Vec::len);
    if parsed.b_matrix.iter().any(|row| row.len() != d_visible) {
        return Err(DataError::Malformed {
            path: path_str,
            message: "B rows have inconsistent widths".into(),
        });
    }
    let flat: Vec<f64> = parsed.b_matrix.into_iter().flatten().collect();
    let weights =
        Array2::from_shape_vec((d_hidden, d_visible), flat).map_err(|e| DataError::Malformed {
            path: path_str.clone(),
            message: e.to_string(),
        })?;
    ScoreModel::gauss_bernoulli_rbm(weights, Array1::from(parsed.b), Array1::from(parsed.c_bias))
        .map_err(|e| DataError::Malformed {
            path: path_str,
            message: e.to_string(),
        })
}
