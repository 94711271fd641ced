use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {0}: must be at least 2")]
    InvalidDimension(usize),
    #[error("invalid basis count {0}")]
    InvalidCount(usize),
    #[error("dimension {0} is not prime")]
    NotPrime(usize),
    #[error("basis {basis} is not orthonormal (deviation {deviation:.3e})")]
    NotOrthonormal { basis: usize, deviation: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("basis set is degenerate (rank {rank}, expected {expected})")]
    Degenerate { rank: usize, expected: usize },
    #[error("problem needs {needed} variables, cap is {cap}")]
    VariableCap { needed: usize, cap: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
