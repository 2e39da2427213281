//! Sample storage: an n×d table of observations.

use ndarray::Array2;

use crate::error::{KsdError, Result};

/// An n×d table of real observations, one row per observation.
///
/// Construction validates that every entry is finite; downstream Gram assembly
/// relies on this so that NaNs cannot silently poison kernel matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    data: Array2<f64>,
}

impl SampleSet {
    /// Wraps an n×d array, rejecting empty shapes and non-finite entries.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(KsdError::EmptySampleSet);
        }
        for ((row, col), &v) in data.indexed_iter() {
            if !v.is_finite() {
                return Err(KsdError::NonFinite { row, col });
            }
        }
        let data = if data.is_standard_layout() {
            data
        } else {
            data.as_standard_layout().into_owned()
        };
        Ok(Self { data })
    }

    /// Builds a sample set from observation rows of equal width.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(KsdError::EmptySampleSet);
        }
        let d = rows[0].len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(KsdError::DimensionMismatch {
                    expected: d,
                    got: rows[i].len(),
                });
            }
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let data = Array2::from_shape_vec((rows.len(), d), flat)
            .expect("rows of equal width form a rectangular array");
        Self::new(data)
    }

    /// Number of observations.
    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    /// Observation dimension.
    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// The i-th observation as a contiguous slice.
    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.flat()[i * d..(i + 1) * d]
    }

    /// Row-major flat view of the whole table.
    pub(crate) fn flat(&self) -> &[f64] {
        self.data
            .as_slice()
            .expect("sample storage is standard layout")
    }

    /// The underlying n×d array.
    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }
}
