//! Error type shared across the crate.

/// Errors raised by tensor ops, configuration parsing, data ingestion,
/// and training.
#[derive(Debug, thiserror::Error)]
pub enum CasdError {
    /// Shape or extent mismatch in a tensor operation.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// Invalid configuration value or unknown key.
    #[error("config error: {0}")]
    Config(String),
    /// Malformed or missing input data.
    #[error("data error: {0}")]
    Data(String),
    /// Non-finite values, divergence, or a failed gradient check.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Wrong command-line usage.
    #[error("usage error: {0}")]
    Usage(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CasdError>;

impl CasdError {
    /// Process exit code for the CLI: 2 usage/config, 3 data/io, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            CasdError::Config(_) | CasdError::Usage(_) => 2,
            CasdError::Data(_) | CasdError::Io(_) => 3,
            CasdError::Numeric(_) | CasdError::Dimension(_) => 4,
        }
    }
}
