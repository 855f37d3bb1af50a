use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("diagonal entry ({0}, {0}) is stored in theta, not in the edge map")]
    DiagonalWrite(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("node {node} out of range for a network of {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },

    #[error("invalid sample matrix: {0}")]
    InvalidSamples(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("non-finite value while evaluating {0}")]
    NumericOverflow(&'static str),

    #[error("distance oracle returned a non-finite value for pair ({i}, {j})")]
    NonFiniteDistance { i: usize, j: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
