//! Small dense/convolutional network engine with exact reverse-mode gradients
//! with respect to both parameters and inputs, Adam, and mini-batch training.
//!
//! Everything is `f64`. Per-sample tensors are row-major; a batch is an
//! `Array2` with one flattened sample per row.

mod adam;
mod layers;
mod network;
mod tensor;
mod train;

pub use adam::{adam_step, l2_total_grad, AdamState};
pub use layers::LayerSpec;
pub use network::{backward, backward_batch, forward, forward_batch, mse_loss, BatchGrad, Gradients, Network};
pub use tensor::Tensor;
pub use train::{fit, train, TrainConfig, TrainOutcome};
