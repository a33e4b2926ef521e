//! Dense tensors with define-by-run reverse-mode differentiation.
//!
//! Ops are methods on [`Graph`]; each appends a node and returns a [`Var`].
//! [`Graph::backward`] sweeps the tape from a scalar loss and returns the
//! gradient of every differentiable leaf. Element type is generic over
//! [`Scalar`] so the same model code runs in `f32` for training and `f64`
//! for gradient checks.

mod attention;
pub mod check;
mod error;
mod graph;
mod ops;
mod scalar;
mod shape;
mod tensor;

pub use attention::AttentionParams;
pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, Var};
pub use ops::BatchStats;
pub use scalar::Scalar;
pub use shape::numel;
pub use tensor::Tensor;
