use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("parameter layouts differ")]
    LayoutMismatch,

    #[error("invalid value for `{field}`: {message}")]
    Domain { field: String, message: String },

    #[error("update norm {norm} exceeds clip norm {clip}; clip before perturbing")]
    Unclipped { norm: f64, clip: f64 },

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("need {needed} examples, only {available} available")]
    InsufficientExamples { needed: usize, available: usize },

    #[error("{path}: {kind}")]
    Format { path: PathBuf, kind: FormatError },

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Problems found while decoding one of the binary dataset formats.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("wrong magic number: expected {expected:#010x}, found {found:#010x}")]
    WrongMagic { expected: u32, found: u32 },
    #[error("file truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
}

impl Error {
    pub(crate) fn domain(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Domain {
            field: field.into(),
            message: message.into(),
        }
    }
}
