use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value at index {index}: {value}")]
    Numeric { index: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient samples of class {class}: need {needed}, have {available}")]
    Capacity {
        class: usize,
        needed: usize,
        available: usize,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error at row {row}: {message}")]
    Validation { row: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("cost mismatch in {term}: measured {measured}, analytic {analytic}")]
    CostMismatch {
        term: String,
        measured: u128,
        analytic: u128,
    },

    #[error("round {round}, phase {phase}: {source}")]
    Round {
        round: usize,
        phase: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach the round and protocol phase in which a component error surfaced.
    pub(crate) fn in_phase(self, round: usize, phase: &'static str) -> Self {
        Error::Round {
            round,
            phase,
            source: Box::new(self),
        }
    }
}
