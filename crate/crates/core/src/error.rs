use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not fit together.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A model or training configuration is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller violated an operation's precondition.
    #[error("contract error: {0}")]
    Contract(String),

    /// Input outside an operation's mathematical domain (e.g. log of a non-positive value).
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical routine failed (non-PSD covariance, failed eigendecomposition).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A loss or gradient went NaN/inf during training.
    #[error("non-finite value in {what} at iteration {iteration}{}", dump_suffix(.checkpoint))]
    NonFinite {
        what: String,
        iteration: u64,
        checkpoint: Option<PathBuf>,
    },

    /// Malformed file contents.
    #[error("format error in {path}: {message}")]
    Format { path: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn dump_suffix(path: &Option<PathBuf>) -> String {
    match path {
        Some(p) => format!(" (last good state written to {})", p.display()),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
