use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::env::Sample;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("matrix is not positive definite (failed at pivot {pivot} with jitter {jitter:e})")]
    NotPositiveDefinite { pivot: usize, jitter: f64 },

    #[error("non-finite gradient encountered at parameter {index}")]
    NonFiniteGradient { index: usize },

    #[error("gradient tape was already consumed by a backward pass")]
    TapeAlreadyConsumed,

    #[error("point ({x}, {y}) lies outside the environment extent")]
    OutOfExtent { x: f64, y: f64 },

    #[error("waypoint not reached within {steps} control steps")]
    StepCapExceeded { steps: usize, partial: Vec<Sample> },

    #[error("unknown {what} `{name}`")]
    UnknownKind { what: &'static str, name: String },

    #[error("test targets have zero variance")]
    DegenerateTruth,

    #[error("no input: {0}")]
    EmptyInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input (configuration, files, names).
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::UnknownKind { .. }
                | Error::Parse { .. }
                | Error::Io { .. }
                | Error::EmptyInput(_)
        )
    }

    /// True for failures of the numerical pipeline.
    pub fn is_numerical_error(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::NonFiniteGradient { .. }
                | Error::DegenerateTruth
        )
    }
}
