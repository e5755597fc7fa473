use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the modelling pipeline.
///
/// Every variant carries the name of the module that raised it so that
/// command-line drivers can report module-tagged messages.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's precondition (dimensions, signs, ...).
    #[error("[{module}] contract violation: {message}")]
    Contract { module: &'static str, message: String },

    /// A factorization or optimizer produced an unusable result.
    #[error("[{module}] numerical failure: {message}")]
    Numerical { module: &'static str, message: String },

    /// Invalid user configuration.
    #[error("[{module}] configuration error: {message}")]
    Config { module: &'static str, message: String },

    /// Malformed or inconsistent input data.
    #[error("[{module}] data error: {message}")]
    Data { module: &'static str, message: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn contract(module: &'static str, message: impl Into<String>) -> Self {
        Error::Contract { module, message: message.into() }
    }

    pub fn numerical(module: &'static str, message: impl Into<String>) -> Self {
        Error::Numerical { module, message: message.into() }
    }

    pub fn config(module: &'static str, message: impl Into<String>) -> Self {
        Error::Config { module, message: message.into() }
    }

    pub fn data(module: &'static str, message: impl Into<String>) -> Self {
        Error::Data { module, message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
