use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unsupported image format {format} in {path}")]
    UnsupportedFormat { path: PathBuf, format: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("checkpoint incompatible with network; offending parameters: {}", names.join(", "))]
    CheckpointIncompatible { names: Vec<String> },

    #[error("training aborted at step {step}: {reason}")]
    TrainingDiverged { step: u64, reason: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

/// Broad failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Argument(_) | Error::CheckpointIncompatible { .. } => {
                ErrorKind::Config
            }
            Error::Numeric(_) | Error::TrainingDiverged { .. } => ErrorKind::Numeric,
            Error::Shape(_)
            | Error::Data(_)
            | Error::Manifest { .. }
            | Error::UnsupportedFormat { .. }
            | Error::UndefinedMetric(_)
            | Error::Io { .. } => ErrorKind::Data,
        }
    }

    /// 2 config, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numeric => 4,
        }
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(format!($($arg)*)) };
}
pub(crate) use shape_err;
