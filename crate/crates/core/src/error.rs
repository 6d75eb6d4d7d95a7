use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("duplicate key: {0}")]
    DuplicateKey(String),

    #[error("unknown template: {0}")]
    UnknownTemplate(String),

    #[error("unknown class name: {0}")]
    UnknownClass(String),

    #[error("sensor index {index} out of range for {count} sensors")]
    SensorOutOfRange { index: usize, count: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("checkpoint does not match dataset: {0}")]
    Mismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
