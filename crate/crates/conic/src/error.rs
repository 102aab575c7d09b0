use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConicError {
    #[error("malformed program: {0}")]
    Malformed(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}
