//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records primitives in execution order; [`Tape::backward`]
//! sweeps it once in reverse. [`Tape::threshold`] is the straight-through
//! binarization used for hard paragraph masks: it emits `{0, 1}` values in
//! the forward pass and an identity Jacobian in the backward pass.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{
    directional_gradient_check, gradient_check, gradient_check_with, GradCheckOptions, GradCheckReport,
};
pub use tape::{cosine_raw, Primitive, Tape, ThresholdMode, Var, ALL_PRIMITIVES, BCE_EPS, SELU_ALPHA, SELU_LAMBDA};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: index {index} out of bounds ({bound})")]
    Index { op: &'static str, index: usize, bound: usize },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("{op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("buffer of length {len} does not match shape {shape:?}")]
    BadBuffer { shape: Vec<usize>, len: usize },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("non-finite {what}")]
    NonFinite { what: String },
}
