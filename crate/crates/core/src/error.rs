use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("too few samples to pair: n = {0}, need at least 2")]
    TooFewSamples(usize),

    #[error("dataset shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("non-finite vector entry at index {0}")]
    NonFiniteVector(usize),

    #[error("covariance matrix is singular")]
    SingularCovariance,

    #[error("reference set too small: |R| = {size}, need more than 6k = {required}")]
    ReferenceSetTooSmall { size: usize, required: usize },

    #[error("invalid reference set: {0}")]
    InvalidReferenceSet(String),

    #[error("parameter out of range: {0}")]
    ParameterRange(String),

    #[error("oracle input too large: {0}")]
    OracleTooLarge(String),

    #[error("largest good subset is not unique: incomparable maximal subsets found")]
    NonUniqueMaximum,

    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("malformed input: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
