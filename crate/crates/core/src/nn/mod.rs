//! Minimal feed-forward network engine: dense/ReLU/concat/projection layers,
//! exact vector-Jacobian products, softmax cross-entropy and optimizers.
//!
//! Everything is `f64`; gradients are checked against central finite
//! differences in the test suite.

mod loss;
mod optim;
mod params;
mod projection;
mod stack;

pub use loss::{argmax, softmax, softmax_cross_entropy};
pub use optim::{sgd_step, Optimizer, OptimizerKind};
pub use params::{mean_params, Params, Tensor};
pub use projection::{block_powers, projection_backward, projection_forward, PowerMode};
pub use stack::{ForwardCache, GradientSet, Layer, LayerStack};
