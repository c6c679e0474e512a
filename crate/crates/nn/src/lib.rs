//! Small deterministic neural-network engine.
//!
//! Provides exactly the layer set needed for sequential 1D/2D CNN
//! classifiers (convolution, max pooling, flatten, dense, dropout) with
//! hand-written backpropagation, binary cross-entropy and Adam. Everything
//! runs on the CPU in a fixed evaluation order, so a seed plus the inputs
//! determine every parameter bit after training.

mod adam;
mod dropout;
mod error;
mod layer;
mod loss;
mod model;
mod ops;
mod real;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use dropout::dropout_mask;
pub use error::{NnError, Result};
pub use layer::{Activation, LayerSpec};
pub use loss::{bce_loss, BCE_EPSILON};
pub use model::ModelGraph;
pub use real::Real;
pub use tensor::Tensor;

/// Total number of trainable scalars (weights plus biases).
pub fn param_count<T: Real>(model: &ModelGraph<T>) -> usize {
    model.param_count()
}
