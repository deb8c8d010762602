//! Dense `f64` tensors, a reverse-mode autodiff graph and the Adam
//! optimizer. Everything the classifiers and the penalized loss are built
//! from.

mod adam;
pub mod gradcheck;
mod graph;
pub mod init;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Graph, Var, PROB_CLAMP};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EngineError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("{op}: non-finite value encountered")]
    NonFinite { op: &'static str },
    #[error("shape {shape:?} cannot hold {len} values (extents must be positive)")]
    BadShape { shape: Vec<usize>, len: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}
