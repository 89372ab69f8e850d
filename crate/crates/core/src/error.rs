use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation (non-finite
    /// values, zero-norm vectors, non-positive bases).
    #[error("domain error: {0}")]
    Domain(String),
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    /// Standard deviation at or below the degeneracy threshold.
    #[error("degenerate distribution: sigma = {sigma:e}")]
    Degenerate { sigma: f64 },
    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("data error: {0}")]
    Data(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("argument error: {0}")]
    Argument(String),
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Shape { expected, found })
    }
}
