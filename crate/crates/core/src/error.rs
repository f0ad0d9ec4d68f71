use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("probability {0} is outside (0, 1)")]
    InvalidProbability(f64),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("series did not converge within {terms} terms")]
    Divergence { terms: usize },

    #[error("unreachable stockout rate: target rate {target} exceeds the supremum of the rate function")]
    UnreachableRate { target: f64 },

    #[error("quadrature did not converge: achieved error estimate {achieved:e}")]
    Quadrature { achieved: f64 },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse { row: u64, column: usize, message: String },

    #[error("empty demand file: {}", .0.display())]
    EmptyData(PathBuf),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_probability(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidProbability(delta))
    }
}
