//! Minimal differentiable engine: tensors, layers with hand-written
//! backward passes, cross-entropy losses, an adaptive-moment optimizer,
//! finite-difference gradient checking and the checkpoint container.

mod checkpoint;
mod gradcheck;
mod layers;
mod loss;
mod params;
mod tensor;

use thiserror::Error;

pub use checkpoint::{Checkpoint, Record};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use layers::{same_padding, LayerSpec, Sequential, WeightInit, KERNEL};
pub use loss::{
    log_softmax, sigmoid, sigmoid_cross_entropy_with_logits, softmax,
    softmax_cross_entropy_with_indices, softmax_cross_entropy_with_logits, softplus, Loss,
};
pub use params::{Adam, ModelParams, Param, ParamId};
pub use tensor::{Real, Tensor};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("layer {index}: {reason}")]
    BadLayer { index: usize, reason: String },
    #[error("duplicate parameter name {0}")]
    DuplicateParam(String),
    #[error("parameter layout mismatch: {0}")]
    ParamLayout(String),
    #[error("backward called without a preceding forward pass")]
    NoForward,
    #[error("optimizer step before any gradients were computed")]
    NoGradients,
    #[error("row {0} is not a one-hot vector")]
    NotOneHot(usize),
    #[error("binary target at position {0} is not 0 or 1")]
    BadTarget(usize),
    #[error("empty input")]
    Empty,
    #[error("checkpoint error at byte {offset}: {reason}")]
    Checkpoint { offset: usize, reason: String },
}
