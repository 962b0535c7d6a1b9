use thiserror::Error;

/// Errors raised by tensor construction and graph operations.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch, lhs {lhs:?} vs rhs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },

    #[error("{op}: index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },

    #[error("unknown parameter `{name}`")]
    UnknownParam { name: String },

    #[error("parameter `{name}` registered twice")]
    DuplicateParam { name: String },

    #[error("{op}: empty input: {what}")]
    EmptyInput { op: &'static str, what: String },

    #[error("gradient check: function evaluation was non-finite at `{param}`[{index}]")]
    NonFiniteEval { param: String, index: usize },
}
