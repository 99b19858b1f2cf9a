//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors are grouped by the exit-code class the CLI maps them to:
/// usage (2), data/format (3) and numerical (4).
#[derive(Debug, Error)]
pub enum Error {
    /// Caller violated an API contract (bad argument, wrong call order).
    #[error("usage: {0}")]
    Usage(String),

    /// A module was driven through an invalid lifecycle transition.
    #[error("state: {0}")]
    State(String),

    /// Malformed or inconsistent input data or file contents.
    #[error("data: {0}")]
    Data(String),

    /// Numerical failure (factorization breakdown, non-finite values).
    #[error("numerical: {0}")]
    Numerical(String),

    /// I/O failure with path context.
    #[error("io: {context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit code the CLI uses for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::State(_) => 2,
            Error::Data(_) | Error::Io { .. } => 3,
            Error::Numerical(_) => 4,
        }
    }
}
