//! Small deterministic differentiable kernel: tensors, a gradient tape, MLP
//! and GRU blocks, Adam and z-score normalization.

pub mod adam;
pub mod layers;
pub mod normalizer;
pub mod tape;
pub mod tensor;

pub use adam::Adam;
pub use layers::{BoundGru, BoundMlp, Dense, GruCell, Mlp, OutputActivation};
pub use normalizer::{Normalizer, ZScore};
pub use tape::{Gradients, NodeId, Tape, TapeError};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("shape mismatch: {0}")]
pub struct ShapeError(String);

impl ShapeError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}
