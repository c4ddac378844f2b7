//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by corpus construction, model fitting and the analyses.
#[derive(Debug, Error)]
pub enum Error {
    /// A malformed input row; the message names the offending field.
    #[error("{message} (line {line})")]
    Parse { line: u64, message: String },

    /// A precondition or argument violation.
    #[error("{0}")]
    InvalidInput(String),

    /// A file carries a different format version than the reader expects.
    #[error("unsupported file version: expected {expected:?}, found {found:?}")]
    VersionMismatch { expected: String, found: String },

    /// A serialized file is structurally broken.
    #[error("corrupt {format} file: {message}")]
    Corrupt { format: &'static str, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn parse(line: u64, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
