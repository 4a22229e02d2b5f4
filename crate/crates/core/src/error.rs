//! Error type shared by every pipeline stage.

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported {format} version {found} (expected {expected})")]
    Version {
        format: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("truncated {format} payload: needed {needed} bytes, {available} available")]
    Truncated {
        format: &'static str,
        needed: u64,
        available: u64,
    },

    #[error("{format} file has {count} trailing bytes")]
    TrailingBytes { format: &'static str, count: u64 },

    #[error("non-finite value in {what} at position {index}")]
    NonFinite { what: String, index: usize },

    #[error("{what} mismatch: expected {expected}, found {found}")]
    Mismatch {
        what: String,
        expected: u64,
        found: u64,
    },

    #[error("{what} {value} out of range (limit {limit})")]
    OutOfRange {
        what: String,
        value: u64,
        limit: u64,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// Short category name used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::BadMagic { .. }
            | Error::Version { .. }
            | Error::Truncated { .. }
            | Error::TrailingBytes { .. } => "format",
            Error::NonFinite { .. } => "non-finite",
            Error::Mismatch { .. } => "mismatch",
            Error::OutOfRange { .. } => "out-of-range",
            Error::Empty(_) => "empty",
            Error::Invalid(_) => "invalid",
            Error::Parse(_) => "parse",
            Error::Config(_) => "config",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn mismatch(what: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::Mismatch {
            what: what.into(),
            expected: expected as u64,
            found: found as u64,
        }
    }

    pub(crate) fn out_of_range(what: impl Into<String>, value: usize, limit: usize) -> Self {
        Error::OutOfRange {
            what: what.into(),
            value: value as u64,
            limit: limit as u64,
        }
    }
}
