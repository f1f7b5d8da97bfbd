//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration or invalid user input (CLI exit code 1).
    #[error("config error: {0}")]
    Config(String),

    /// Shape contract violation between tensors or images.
    #[error("shape error: {0}")]
    Shape(String),

    /// Token outside the closed caption grammar.
    #[error("out-of-vocabulary token: {0:?}")]
    OutOfVocabulary(String),

    /// Numerical failure during training or sampling (NaN and friends).
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    /// Anything else that went wrong at runtime (CLI exit code 2).
    #[error("{0}")]
    Runtime(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn runtime(msg: impl Into<String>) -> Self {
        Error::Runtime(msg.into())
    }

    /// Process exit code for the CLI: 1 for validation problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::OutOfVocabulary(_) => 1,
            _ => 2,
        }
    }
}
