//! Error taxonomy shared by every module in the crate.
//!
//! The CLI maps these onto process exit codes: `Config`/`Usage` style
//! problems exit 2, numeric failures exit 3, I/O failures exit 4.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value (bad hyperparameter, empty layer list, ...).
    #[error("config error: {0}")]
    Config(String),

    /// Dimension mismatch between an input and what the operation expects.
    #[error("shape error: {0}")]
    Shape(String),

    /// Non-finite value produced or encountered where finite math is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Structurally invalid data (malformed dataset line, bad checkpoint, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Operation called in a state that does not permit it.
    #[error("state error: {0}")]
    State(String),

    /// Out-of-range index, e.g. a relabel index before the transition it labels.
    #[error("index error: {0}")]
    Index(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
    pub fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }
    pub fn index(msg: impl Into<String>) -> Self {
        Error::Index(msg.into())
    }

    /// Exit code the CLI should use for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::State(_) => 2,
            Error::Shape(_) | Error::Numeric(_) | Error::Data(_) | Error::Index(_) => 3,
            Error::Io(_) => 4,
        }
    }
}
