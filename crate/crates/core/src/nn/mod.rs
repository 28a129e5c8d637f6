//! A small reverse-mode differentiable engine: batched `f64` tensors, the layer
//! kinds the models need, losses, and Adam/SGD.

pub mod checkpoint;
pub mod gemm;
mod layers;
mod loss;
mod optim;
mod sequential;
mod tensor;

use thiserror::Error;

pub use layers::{Conv2d, ConvTranspose2d, Dense, Layer};
pub use loss::{cross_entropy, cross_entropy_batch, l2_recon_loss, Loss};
pub use optim::{Optimizer, OptimizerKind, TrainConfig};
pub use sequential::Sequential;
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("{context}: expected shape {expected:?}, got {actual:?}")]
    ShapeMismatch { context: String, expected: Vec<usize>, actual: Vec<usize> },
    #[error("layer {index} ({layer}): {message}")]
    LayerShape { index: usize, layer: String, message: String },
    #[error("backward called without a recorded forward pass")]
    NoRecordedGraph,
    #[error("parameter '{0}' has no gradient")]
    MissingGradient(String),
    #[error("class index {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("not a probability vector: {0}")]
    InvalidProbabilities(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Anything that owns trainable tensors. Iteration order is the construction
/// order and is stable across runs.
pub trait Parameterized {
    fn named_params(&self) -> Vec<(String, &Tensor)>;
    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    fn zero_grad(&mut self) {
        for (_, p) in self.named_params_mut() {
            p.clear_grad();
        }
    }
}
