//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch on index {label}: {left} vs {right}")]
    DimensionMismatch {
        label: String,
        left: usize,
        right: usize,
    },
    #[error("index {0} appears more than once")]
    DuplicateLabel(String),
    #[error("index {0} is not present on the tensor")]
    MissingLabel(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("invalid bipartition: {0}")]
    InvalidSplit(String),
    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    SymmetryViolation(f64),
    #[error("matrix is defective or nearly defective (Gram condition number {0:.3e})")]
    Defective(f64),
    #[error("linear algebra routine failed: {0}")]
    Linalg(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("normalization vanished (|<L|R>| = {0:.3e})")]
    VanishingOverlap(f64),
    #[error("dense representation too large: {sites} sites of dimension {dim}")]
    TooLarge { sites: usize, dim: usize },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },
    #[error("did not converge within {iterations} iterations (last change {last_change:.3e})")]
    NotConverged { iterations: usize, last_change: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    /// True for failures caused by user input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidParameter { .. } | Error::Io(_) | Error::Checkpoint(_)
        )
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
