use thiserror::Error;

/// Errors produced across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the requested tensor op.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A tensor constructor received an inconsistent shape/value pair.
    #[error("invalid tensor: shape {shape:?} implies {expected} values, got {actual}")]
    InvalidTensor {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    /// Backward was requested on a non-scalar tensor.
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    /// Backward was requested on a tensor with no recorded ops.
    #[error("backward on detached tensor: no ops recorded")]
    DetachedTensor,

    /// A graph was traversed backward more than once.
    #[error("graph already consumed by a previous backward")]
    GraphConsumed,

    /// Invalid argument outside of tensor shape rules.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Audio decoding or geometry problems.
    #[error("audio error: {0}")]
    Audio(String),

    /// Malformed binary or JSON-lines data files.
    #[error("data format error: {0}")]
    Format(String),

    /// A numeric failure during training (NaN loss).
    #[error("numeric failure: NaN loss at batch {batch}")]
    NanLoss { batch: usize },

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
