use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MilpError {
    #[error("instance has no variables or no constraints")]
    EmptyInstance,
    #[error("variable {var}: lower bound exceeds upper bound")]
    BadBounds { var: usize },
    #[error("non-finite coefficient in {what}")]
    NonFinite { what: &'static str },
    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("variable {var} is not binary")]
    NotBinary { var: usize },
    #[error("brute force limited to 22 variables, instance has {n}")]
    TooLarge { n: usize },
    #[error("instance has no feasible assignment")]
    Infeasible,
    #[error("variable {var} appears in both X0 and X1")]
    Overlap { var: usize },
    #[error("invalid permutation")]
    BadPermutation,
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for MilpError {
    fn from(e: std::io::Error) -> Self {
        MilpError::Io(e.to_string())
    }
}
