use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can report.
///
/// Variants are grouped so that callers (the CLI in particular) can map them
/// onto stable exit codes: argument problems, I/O and format problems, and
/// numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value at row {row}, col {col}")]
    NonFinite { row: usize, col: usize },

    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("parse error in {path} at row {row}, col {col}: {reason}")]
    Parse {
        path: PathBuf,
        row: usize,
        col: usize,
        reason: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("class {class} has no probability mass; its centroid is undefined")]
    DegenerateClass { class: usize },

    #[error("empty class {class} in mmd computation")]
    EmptyClass { class: usize },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("no candidates available for selection")]
    EmptyCandidatePool,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Coarse classification used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) | Error::DimensionMismatch { .. } | Error::EmptyCandidatePool => {
                ErrorKind::Argument
            }
            Error::NonFinite { .. }
            | Error::MalformedHeader { .. }
            | Error::Parse { .. }
            | Error::Io { .. }
            | Error::Json(_) => ErrorKind::Io,
            Error::DegenerateClass { .. } | Error::EmptyClass { .. } | Error::Divergence(_) => {
                ErrorKind::Numeric
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Argument,
    Io,
    Numeric,
}
