use std::fmt;

use thiserror::Error;

/// Coarse error classes, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Caller passed an unusable argument.
    Usage,
    /// An input file does not follow its format.
    Format,
    /// Data is well-formed but violates a domain invariant.
    Invariant,
    /// Underlying I/O failure.
    Io,
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ErrorCategory::Usage => "usage",
            ErrorCategory::Format => "format",
            ErrorCategory::Invariant => "invariant",
            ErrorCategory::Io => "io",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload: need {expected} bytes, file has {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("malformed input: {0}")]
    Format(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("store is empty")]
    EmptyStore,

    #[error("record {0} has a zero-norm vector")]
    ZeroNorm(u64),

    #[error("zero-norm vector in {0}")]
    ZeroNormInput(String),

    #[error("neighbor {0} carries no label")]
    UnlabeledNeighbor(u64),

    #[error("unknown record ids: {0:?}")]
    UnknownIds(Vec<u64>),

    #[error("duplicate record id {0}")]
    DuplicateId(u64),

    #[error("label space mismatch: {0}")]
    LabelSpaceMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Io(_) => ErrorCategory::Io,
            Error::BadMagic { .. }
            | Error::UnsupportedVersion(_)
            | Error::Truncated { .. }
            | Error::Format(_) => ErrorCategory::Format,
            Error::InvalidParam(_) => ErrorCategory::Usage,
            Error::Invariant(_)
            | Error::DimensionMismatch { .. }
            | Error::EmptyStore
            | Error::ZeroNorm(_)
            | Error::ZeroNormInput(_)
            | Error::UnlabeledNeighbor(_)
            | Error::UnknownIds(_)
            | Error::DuplicateId(_)
            | Error::LabelSpaceMismatch(_) => ErrorCategory::Invariant,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        if err.is_io() {
            Error::Io(err.into())
        } else {
            Error::Format(err.to_string())
        }
    }
}

impl From<image::ImageError> for Error {
    fn from(err: image::ImageError) -> Self {
        match err {
            image::ImageError::IoError(io) => Error::Io(io),
            other => Error::Format(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
