//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input to an operation (bad shapes, empty mention sets,
    /// out-of-range ids).
    #[error("input error: {0}")]
    Input(String),

    /// Input exceeds a configured capacity (e.g. sequence longer than the
    /// positional table).
    #[error("capacity error: {0}")]
    Capacity(String),

    /// A record failed to parse; carries the 1-based line number.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A parsed record violates a documented invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// A non-finite value appeared where the computation requires finite
    /// numbers; `context` names the layer or parameter.
    #[error("numeric error: non-finite value in {context}")]
    Numeric { context: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numeric(context: impl Into<String>) -> Self {
        Error::Numeric { context: context.into() }
    }
}
