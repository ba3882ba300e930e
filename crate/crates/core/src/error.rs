use std::path::PathBuf;

use crate::tomography::DensityMatrix;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("lattice index {index} outside [-{half_range}, {half_range}]")]
    OutOfRange { index: i64, half_range: i64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("outside supported domain: {0}")]
    Domain(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("incomplete data: {0}")]
    IncompleteData(String),

    #[error("optimizer did not converge after {restarts} restarts (best likelihood {best_likelihood:.6e})")]
    NonConvergence {
        restarts: usize,
        best_likelihood: f64,
        best: Box<DensityMatrix>,
    },

    #[error("configuration invalid:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
