use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate surface string `{0}`")]
    DuplicateSurface(String),
    #[error("text partition must not be empty")]
    EmptyText,
    #[error("invalid surface string {0:?}: surfaces must be non-empty and free of whitespace")]
    InvalidSurface(String),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    OutOfRange { id: usize, size: usize },
    #[error("unknown surface `{0}`")]
    UnknownSurface(String),
    #[error("unknown code pattern `{0}`")]
    UnknownPattern(String),
    #[error("loss mask selects no positions")]
    EmptyMask,
    #[error("generated sequence is empty")]
    EmptyGeneration,
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("group of size {0} is too small; need at least 2 rollouts")]
    GroupTooSmall(usize),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
