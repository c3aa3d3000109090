//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! Build a [`Graph`], feed it leaves with [`Graph::param`] or
//! [`Graph::constant`], compose operations, then call
//! [`Graph::backward`] on a one-element loss.

pub mod gradcheck;
mod graph;
pub mod kernels;
mod tensor;

pub use graph::{Graph, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("contract violation: {0}")]
    Contract(String),
}

impl TensorError {
    pub(crate) fn dim(op: &'static str, detail: String) -> Self {
        Self::Dimension { op, detail }
    }
}
