use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("label {0} has no samples")]
    EmptyLabel(usize),

    #[error("sample {0} carries no label")]
    UnlabeledSample(usize),

    #[error("no query has a relevant item in the base set")]
    NoValidQueries,

    #[error("{path}: checksum mismatch (expected {expected:08x}, found {found:08x})")]
    ChecksumMismatch {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{path}: unsupported format_version {found} (expected {expected})")]
    VersionMismatch {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated or oversized file ({found} bytes, expected {expected})")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("checkpoint phase mismatch: expected {expected}, found {found}")]
    PhaseMismatch {
        expected: &'static str,
        found: String,
    },

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error on {path}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Errors caused by bad user input (arguments, shapes, labels, a
    /// checkpoint of the wrong phase) rather than by a failing computation
    /// or unreadable files.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::ShapeMismatch { .. }
                | Error::InvalidArgument(_)
                | Error::EmptyLabel(_)
                | Error::UnlabeledSample(_)
                | Error::PhaseMismatch { .. }
        )
    }

    pub(crate) fn shape(op: &'static str, expected: (usize, usize), found: (usize, usize)) -> Self {
        Error::ShapeMismatch { op, expected, found }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

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
