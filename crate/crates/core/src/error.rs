//! Error type shared across the crate.
//!
//! Variants are grouped by how the CLI maps them to exit codes: data and
//! configuration problems exit with 2, numerical failures with 3. Usage
//! errors (bad flags) never reach this type; clap reports those and the
//! binary exits with 1.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed or inconsistent input data (files, readings, grids).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A parameter outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Not enough observations to carry out the requested operation.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A sensor whose data cannot be used (all-missing, zero variance).
    #[error("degenerate sensor {sensor}: {reason}")]
    DegenerateSensor { sensor: String, reason: String },

    /// The requested combination of model and operation is unsupported.
    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// Inconsistent messages at the assembly point of the runtime split.
    #[error("assembly failed: {0}")]
    Assembly(String),

    /// Numerical failure (non-positive-definite matrix, divergence, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A dense materialization larger than the configured cap.
    #[error("size guard: {0}")]
    SizeGuard(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    /// Unparseable field in an input file.
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    /// Process exit code the CLI uses for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) | Error::SizeGuard(_) => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), message: message.into() }
    }
}
