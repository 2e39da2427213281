use thiserror::Error;

/// Errors produced by the estimation and testing routines.
#[derive(Debug, Error)]
pub enum KsdError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty sample set")]
    EmptySampleSet,

    #[error("sample index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("degenerate sample: median pairwise squared distance is zero")]
    DegenerateSample,

    #[error("matrix is not symmetric")]
    NotSymmetric,

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),
}

pub type Result<T> = std::result::Result<T, KsdError>;
