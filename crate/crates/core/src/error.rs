use thiserror::Error;

use crate::tensor::Shape;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("{op}: {msg}")]
    InvalidShape { op: &'static str, msg: String },

    #[error("data length {len} does not match shape {shape} ({} elements)", shape.numel())]
    DataLength { shape: Shape, len: usize },

    #[error("non-finite value in input of {0}")]
    NonFinite(&'static str),

    #[error("loss must be a scalar (1x1x1x1), got {0}")]
    NonScalarLoss(Shape),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("gradient check: {0}")]
    GradCheck(String),

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),

    #[error("missing gradient for parameter `{0}`")]
    MissingGrad(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("image: {0}")]
    Image(String),

    #[error("config: {0}")]
    Config(String),

    #[error("training diverged at step {step}: {what} is not finite")]
    Diverged { step: usize, what: &'static str },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
