use std::path::PathBuf;

use thiserror::Error;

/// Failures raised by the on-disk formats.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u8),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("truncated data: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("declared dims {dims:?} need {expected} values but the payload holds {actual}")]
    DimMismatch {
        dims: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("unsupported image format: {0}")]
    UnsupportedImage(String),
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },
}

impl FormatError {
    /// Stable numeric code, used as the CLI exit status for format failures.
    pub fn code(&self) -> i32 {
        match self {
            FormatError::BadMagic { .. } => 10,
            FormatError::UnsupportedVersion(_) => 11,
            FormatError::UnsupportedDtype(_) => 12,
            FormatError::Truncated { .. } => 13,
            FormatError::DimMismatch { .. } => 14,
            FormatError::UnsupportedImage(_) => 15,
            FormatError::Malformed { .. } => 16,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("non-finite gradient produced by {op}")]
    Numeric { op: &'static str },
    #[error("parameter {name}: {source}")]
    Param {
        name: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn pre(detail: impl Into<String>) -> Self {
        Error::Precondition(detail.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
