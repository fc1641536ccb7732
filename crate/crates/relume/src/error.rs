//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violated a precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration file or flag failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// A file had the wrong structure (bad PFM header, truncated
    /// checkpoint, malformed manifest, ...).
    #[error("format error: {0}")]
    Format(String),

    /// Something failed at run time after validation passed.
    #[error("runtime error: {0}")]
    Runtime(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Process exit code for the CLI: 1 for validation problems,
    /// 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::Config(_) | Error::Format(_) => 1,
            Error::Runtime(_) | Error::Io(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
