use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive semi-definite (min eigenvalue {min_eig:e}, max {max_eig:e})")]
    NotPositiveSemidefinite { min_eig: f64, max_eig: f64 },

    #[error("matrix is not strictly positive definite (min eigenvalue {min_eig:e})")]
    NotStrictlyPositive { min_eig: f64 },

    #[error("matrix decomposition failed: {0}")]
    Decomposition(&'static str),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("empty sample")]
    EmptySample,

    #[error("insufficient data: need more than {required} observations, got {actual}")]
    InsufficientData { required: usize, actual: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("training diverged: loss is NaN at epoch {epoch}, batch {batch} (learning rate {learning_rate:e})")]
    NanLoss {
        epoch: usize,
        batch: usize,
        learning_rate: f64,
    },

    #[error("long-only solver did not converge after {iterations} iterations")]
    LongOnlyNonConvergence { iterations: usize, last: Vec<f64> },

    #[error("misaligned inputs: {0}")]
    Misaligned(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
