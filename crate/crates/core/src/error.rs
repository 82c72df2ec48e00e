use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input records are inconsistent with each other or with the zone.
    #[error("input error: {0}")]
    Input(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    /// An operation was invoked out of order, e.g. backward before forward.
    #[error("state error: {0}")]
    State(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("insufficient data for {what}: need {required}, have {available}")]
    InsufficientData {
        what: String,
        required: usize,
        available: usize,
    },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable numeric code per variant, shared by the CLI exit status and the C API.
    pub fn code(&self) -> i32 {
        match self {
            Error::Domain(_) => 2,
            Error::Input(_) => 3,
            Error::Parse { .. } => 4,
            Error::Validation(_) => 5,
            Error::Shape { .. } => 6,
            Error::State(_) => 7,
            Error::Config(_) => 8,
            Error::InsufficientData { .. } => 9,
            Error::Alignment(_) => 10,
            Error::Checkpoint(_) => 11,
            Error::Io { .. } => 12,
            Error::Json(_) => 13,
        }
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn insufficient(what: impl Into<String>, required: usize, available: usize) -> Self {
        Error::InsufficientData {
            what: what.into(),
            required,
            available,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
