use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped by how the CLI maps them to exit codes:
/// configuration problems exit 1, data problems exit 2, internal
/// invariant violations exit 3.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad key, out-of-range parameter).
    #[error("config error: {0}")]
    Config(String),

    /// A binary input file violates its format contract.
    #[error("format error in {path}{}: {msg}", offset.map(|o| format!(" at byte offset {o}")).unwrap_or_default())]
    Format {
        path: PathBuf,
        offset: Option<u64>,
        msg: String,
    },

    /// A text input file failed to parse.
    #[error("parse error in {path}{}: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse {
        path: PathBuf,
        line: Option<usize>,
        msg: String,
    },

    /// Well-formed data that violates a domain invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// An internal invariant was violated; indicates a bug.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code for the CLI: 1 config, 2 data, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Format { .. } | Error::Parse { .. } | Error::Validation(_) | Error::Io { .. } => 2,
            Error::Internal(_) => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
