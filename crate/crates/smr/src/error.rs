use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum SmrError {
    /// A configuration key is missing or has an invalid value.
    #[error("config error: {0}")]
    Config(String),

    /// Array or image dimensions do not match an operation's contract.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A data file failed to load or validate.
    #[error("load error: {0}")]
    Load(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
