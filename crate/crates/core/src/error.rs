use thiserror::Error;

use crate::dist::TokenId;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(
        "losslessness violation in mode {mode}: first divergence at token {index} \
         (reference {expected:?}, got {actual:?})"
    )]
    Lossless {
        mode: String,
        index: usize,
        expected: Option<TokenId>,
        actual: Option<TokenId>,
    },

    #[error("property violation: {0}")]
    Property(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
