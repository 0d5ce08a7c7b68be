//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// Invalid configuration value (dimensions, counts, parameter ranges).
    #[error("configuration error: {0}")]
    Config(String),

    /// Mismatched lengths or shapes between related inputs.
    #[error("shape error: {0}")]
    Shape(String),

    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data failed validation; messages carry line numbers where known.
    #[error("validation failed:\n{}", .0.join("\n"))]
    Validation(Vec<String>),

    /// Design matrix is rank deficient; names the offending columns.
    #[error("singular design matrix: collinear columns {}", .columns.join(", "))]
    Singular { columns: Vec<String> },

    /// Numerical routine failed (factorization, embedding, non-finite values).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Data are degenerate for the requested fit (e.g. single-class treatment).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Command-line / run-configuration usage error.
    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable process exit code contract: 0 success, 1 usage, 2 validation,
    /// 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Config(_)
            | Error::Shape(_)
            | Error::Domain(_)
            | Error::Validation(_)
            | Error::Degenerate(_)
            | Error::Io(_) => 2,
            Error::Singular { .. } | Error::Numerical(_) => 3,
        }
    }
}
