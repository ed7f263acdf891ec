use thiserror::Error;

use crate::tape::OpKind;
use crate::tensor::Shape;

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op:?}: incompatible shapes {shapes:?}")]
    ShapeMismatch { op: OpKind, shapes: Vec<Shape> },

    #[error("{op:?}: {reason}")]
    InvalidAttribute { op: OpKind, reason: String },

    #[error("{op:?}: produced a non-finite value")]
    NonFinite { op: OpKind },

    #[error("node {0} is not on this tape")]
    InvalidNode(usize),

    #[error("loss must be a scalar, got {0}")]
    NonScalarLoss(Shape),

    #[error("tensor dimensions must be positive, got {rows}x{cols}")]
    EmptyShape { rows: usize, cols: usize },

    #[error("shape {shape} needs {} values, got {len}", shape.len())]
    DataLength { shape: Shape, len: usize },

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("parameter `{0}` already exists")]
    DuplicateParameter(String),

    #[error("finite-difference check: {0}")]
    Check(String),
}
