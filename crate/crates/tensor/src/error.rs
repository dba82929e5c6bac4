use thiserror::Error;

/// Errors raised while building or executing a graph.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    ShapeMismatch {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    BadTensor { shape: Vec<usize>, len: usize },
    #[error("backward called before forward")]
    BackwardBeforeForward,
    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("node {node} ({op}) needs targets but none were fed")]
    MissingTargets { node: usize, op: &'static str },
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("parameter set mismatch: {0}")]
    ParamMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;
