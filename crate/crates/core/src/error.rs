use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input too short: {len} samples, need at least {needed}")]
    InputTooShort { len: usize, needed: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("cepstral mask overlap: k = {k} must satisfy 1 <= k < n/2 (n = {n})")]
    MaskOverlap { k: usize, n: usize },

    #[error("internal consistency check failed: {0}")]
    Internal(String),

    /// Inner p-type shrinkage iteration hit its cap; `last` is the matrix
    /// rebuilt from the last singular-value iterates.
    #[error("p-type shrinkage did not converge within {iterations} iterations")]
    NotConverged {
        iterations: usize,
        last: Box<DMatrix<f64>>,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("rank error: {0}")]
    Rank(String),

    #[error("unsupported sample rate {0} Hz (expected 16000)")]
    SampleRate(u32),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
