//! Dense tensors, a tape-based reverse-mode autodiff graph, and the Adam optimizer.

mod adam;
mod error;
mod gradcheck;
mod graph;
pub mod kernels;
mod param;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use param::{Param, ParamId, ParamStore};
pub use tensor::{Real, Tensor};
