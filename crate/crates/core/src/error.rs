use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record ({field}): {message}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        field: String,
        message: String,
    },

    #[error("{path}:{line}: duplicate sample id {id:?}")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid store file: {0}")]
    InvalidStore(String),

    #[error("invalid checkpoint file: {0}")]
    InvalidCheckpoint(String),

    #[error("empty candidate pool")]
    EmptyPool,

    #[error("k = {k} is out of range for a pool of {pool}")]
    KOutOfRange { k: usize, pool: usize },

    #[error("id {0:?} is not in the candidate pool")]
    UnknownCandidate(String),

    #[error("unknown sample id {0:?}")]
    UnknownSample(String),

    #[error("demonstration {id:?} is missing gold field {field}")]
    IncompleteDemonstration { id: String, field: &'static str },

    #[error("image error for {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("embedding failed for sample {id:?}: {message}")]
    Provider { id: String, message: String },

    #[error("backend error: {0}")]
    Backend(#[from] crate::backend::BackendError),

    #[error("non-finite gradient at episode {episode} (parameter {parameter})")]
    NonFiniteGradient { episode: u64, parameter: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("prediction for {0:?} has no matching gold sample")]
    IdMismatch(String),

    #[error("interrupted")]
    Interrupted,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::MalformedRecord { .. }
                | Error::DuplicateId { .. }
                | Error::DimensionMismatch { .. }
                | Error::KOutOfRange { .. }
                | Error::IncompleteDemonstration { .. }
                | Error::Config(_)
                | Error::EmptyInput(_)
                | Error::IdMismatch(_)
                | Error::UnknownSample(_)
        )
    }
}
