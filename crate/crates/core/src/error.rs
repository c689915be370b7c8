use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown kernel `{0}` (expected epanechnikov or triangular)")]
    UnknownKernel(String),

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}, column {col}: `{value}` is not a finite real")]
    Parse { row: usize, col: usize, value: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("tied values at indices {indices:?}; use the jitter policy to break ties")]
    Ties { indices: Vec<usize> },

    #[error("sample too small: n = {n}, need at least {min}")]
    SampleTooSmall { n: usize, min: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("n = {n} is too large for exhaustive enumeration (max {max})")]
    TooLarge { n: usize, max: usize },

    #[error("copula model evaluator returned a non-finite value at (u, v) = ({u}, {v})")]
    Model { u: f64, v: f64 },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
