//! Dense tensors and a reverse-mode autodiff tape: just enough numeric
//! machinery to express the segmental encoder, the LSTM decoder and the
//! lattice objective.

mod graph;
pub mod kernels;
mod tensor;

pub use graph::{CustomOp, Graph, Var};
pub use tensor::Tensor;

use crate::error::Result;
use crate::scalar::Scalar;

/// Gradients of `loss` with respect to `params`.
pub fn grad<T: Scalar>(graph: &Graph<T>, loss: Var, params: &[Var]) -> Result<Vec<Tensor<T>>> {
    graph.grad(loss, params)
}
