//! Minimal deterministic neural-network engine.
//!
//! Exactly the layers the factor networks need (dense, valid 2-D
//! convolution, max-pooling, time-delay splicing, p-norm, ReLU, softmax),
//! explicit backpropagation in 64-bit floats, SGD/Adam, a finite-difference
//! gradient checker and a portable checkpoint format.

mod checkpoint;
mod gemm;
mod gradcheck;
pub mod layers;
mod network;
mod optim;
mod tensor;

pub use checkpoint::{NetworkCheckpoint, CHECKPOINT_MAGIC, KEY_MODEL_KIND};
pub use gradcheck::{
    grad_check, grad_check_against, loss_and_gradients, objective_value, relative_error, squared_error,
    GradCheckOptions, GradCheckReport, GradientModel, NetworkObjective, Objective, ParamRef,
};
pub use layers::{softmax, softmax_cross_entropy};
pub use network::{Gradients, Layer, LayerSpec, Network};
pub use optim::{adam_step, sgd_step, Adam, AdamState, Optimizer, Sgd};
pub use tensor::Tensor;
