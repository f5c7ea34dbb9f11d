use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    #[error("empty sample")]
    EmptySample,

    #[error("index {index} out of range {lo}..={hi}")]
    IndexError { index: i64, lo: i64, hi: i64 },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("alignment error: {0}")]
    AlignmentError(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("initialization failure: {0}")]
    InitializationFailure(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
