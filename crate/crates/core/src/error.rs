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

    #[error("{context}: line {line}: {message}")]
    Parse {
        context: String,
        line: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("empty token sequence for sample `{0}`")]
    EmptySequence(String),

    #[error("codebook mismatch: k={left} vs k={right}")]
    CodebookMismatch { left: usize, right: usize },

    #[error("all-silence: no frame exceeds the speech threshold")]
    AllSilence,

    #[error("unvoiced-pair: only {co_voiced} co-voiced aligned frames (need {required})")]
    UnvoicedPair { co_voiced: usize, required: usize },

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("audio decode error for {path}: {message}")]
    Audio { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by malformed or inconsistent user input, as
    /// opposed to I/O failures or data-dependent metric failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation(_)
                | Error::Format(_)
                | Error::Truncated { .. }
                | Error::DimensionMismatch { .. }
                | Error::CodebookMismatch { .. }
        )
    }
}
