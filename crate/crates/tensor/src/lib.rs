//! Minimal dense-tensor kernel with a reverse-mode tape and the Adam optimizer.
//!
//! Every tensor that flows through a [`Graph`] is a row-major matrix. Recurrent
//! models unroll over time by recording one set of nodes per step, attention
//! layers record per-example slices; the tape does not care which.
//!
//! Precision is a type parameter: `f32` for training, `f64` for gradient
//! verification against finite differences.

mod error;
mod graph;
mod param;
mod real;
mod tensor;

pub use error::TensorError;
pub use graph::{Gradients, Graph, Var};
pub use param::{AdamConfig, Param, ParamId, ParamSet};
pub use real::Real;
pub use tensor::Tensor;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
