use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch on {axis}: expected {expected}, got {got}")]
    Shape {
        axis: String,
        expected: usize,
        got: usize,
    },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed container at byte {offset}: {reason}")]
    Malformed { offset: u64, reason: String },

    #[error("unsupported wav: {0}")]
    Wav(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("artifact mismatch: {0}")]
    Mismatch(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(axis: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Shape {
            axis: axis.into(),
            expected,
            got,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
