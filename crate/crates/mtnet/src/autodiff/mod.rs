//! Reverse-mode automatic differentiation on dense tensors.
//!
//! A [`Tape`] records primitive applications during a forward pass; calling
//! [`Tape::backward`] on a scalar loss walks the record once in reverse and
//! accumulates gradients into every tensor inserted with `requires_grad`.
//! One tape serves one sample; parameters live outside the tape and are
//! re-inserted each pass (cheap, storage is shared).

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdError {
    #[error("{op}: shape mismatch: lhs {lhs:?} vs rhs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {detail}")]
    BadShape { op: &'static str, detail: String },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("{op}: index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
}
