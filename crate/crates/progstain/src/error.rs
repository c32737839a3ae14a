use thiserror::Error;

/// Errors shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image decode error: {0}")]
    Decode(String),

    #[error("unsupported channel count: {0}")]
    UnsupportedChannels(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("stain matrix is singular (|det| = {0:.3e})")]
    SingularMatrix(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("refinement diverged: {0}")]
    Divergence(String),
}

pub type Result<T> = std::result::Result<T, Error>;
