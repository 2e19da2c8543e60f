use std::path::PathBuf;
use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Error, Debug)]
pub enum Error {
    /// Shape or structural invariant violated (dimension mismatch, malformed CSR, ...).
    #[error("structural error: {0}")]
    Structural(String),

    /// A computation produced a non-finite value.
    #[error("numeric error in {context}: {message}")]
    Numeric { context: String, message: String },

    /// Invalid configuration (empty active set, threshold out of range, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A data file failed to load or validate.
    #[error("data error in {file}{}: {message}", line.map(|l| format!(":{l}")).unwrap_or_default())]
    Data {
        file: PathBuf,
        line: Option<usize>,
        message: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Mathematical domain violation (e.g. zero denominator in an importance ratio).
    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numeric(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Numeric {
            context: context.into(),
            message: message.into(),
        }
    }

    pub fn data(file: impl Into<PathBuf>, line: Option<usize>, message: impl Into<String>) -> Self {
        Error::Data {
            file: file.into(),
            line,
            message: message.into(),
        }
    }
}
