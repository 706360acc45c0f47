use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent or invalid configuration (parameter lengths, batch sizes, ...).
    #[error("configuration error: {0}")]
    Config(String),

    #[error("index {index} out of range 1..={max}")]
    Index { index: usize, max: usize },

    /// Invalid input data (empty samples, mismatched lengths, ...).
    #[error("input error: {0}")]
    Input(String),

    /// A numerical failure such as a non-finite gradient or a failed factorization.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A function left its admissible range (e.g. non-positive conductivity).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("hyperparameter not supported: {0}")]
    UnsupportedHyperparameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) | Error::Domain(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
