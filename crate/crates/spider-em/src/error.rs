//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got} (index {index})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
        index: usize,
    },

    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),

    #[error("invalid step size {0} (must be positive)")]
    InvalidStepSize(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("singular triangular factor (diagonal entry {index})")]
    SingularTriangular { index: usize },

    #[error("power iteration did not converge (residual {residual:.3e} after {iterations} iterations)")]
    PowerIterationStalled { residual: f64, iterations: usize },

    #[error("quadrature mass underflow for example {example}")]
    QuadratureUnderflow { example: usize },

    #[error("{0} is unavailable for this model")]
    OracleUnavailable(&'static str),

    #[error("covariate row {row} has zero norm")]
    ZeroNormRow { row: usize },

    #[error("bad value at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("trace format version mismatch: expected {expected:?}, found {found:?}")]
    VersionMismatch { expected: String, found: String },

    #[error("traces carry different config digests ({a} vs {b})")]
    DigestMismatch { a: String, b: String },

    #[error("{0} must not be empty")]
    EmptyInput(&'static str),

    #[error("validation failed: {0}")]
    ValidationFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line harness.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_)
            | Error::Parse { .. }
            | Error::VersionMismatch { .. }
            | Error::DigestMismatch { .. }
            | Error::EmptyInput(_)
            | Error::InvalidStepSize(_)
            | Error::DimensionMismatch { .. }
            | Error::ZeroNormRow { .. }
            | Error::Io(_) => 2,
            Error::ValidationFailed(_) => 4,
            _ => 3,
        }
    }
}
