use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },
    #[error("invalid layer configuration: {0}")]
    Config(String),
    #[error("cache does not match layer {0}")]
    Cache(&'static str),
}

pub type Result<T> = std::result::Result<T, NnError>;
