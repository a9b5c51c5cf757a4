use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {0}: must be at least 2")]
    InvalidDimension(usize),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("layout error: {0}")]
    Layout(String),

    #[error("unsupported state kind: {0}")]
    UnsupportedKind(&'static str),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("integration diverged at t = {time} us: {reason}")]
    IntegrationDiverged { time: f64, reason: String },

    #[error("stroke {stroke}: {source}")]
    Stroke {
        stroke: u8,
        #[source]
        source: Box<Error>,
    },

    #[error("efficiency undefined: denominator {value} below threshold {threshold}")]
    UndefinedEfficiency { value: f64, threshold: f64 },

    #[error("truncation error: {0}")]
    Truncation(String),

    #[error("ill-posed fit: {reason} (condition number {condition:e})")]
    IllPosedFit { reason: String, condition: f64 },

    #[error("incomplete record: {0}")]
    IncompleteRecord(String),

    #[error("{path}:{line}: {message}")]
    Config {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn in_stroke(self, stroke: u8) -> Self {
        Error::Stroke {
            stroke,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
