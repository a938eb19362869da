//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Operations record onto a [`Tape`] whenever one of their inputs requires a
//! gradient. [`grad`] walks the tape backwards; with `create_graph = true` the
//! backward pass is recorded too, which is what lets the attack differentiate
//! a loss built out of training gradients.
//!
//! ```
//! use awa_core::autodiff::{grad, ops, Array, Tape};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Array::scalar(3.0));
//! let y = ops::mul(&x, &x).unwrap();
//! let dy = grad(&y, &[x.clone()], true).unwrap();
//! assert_eq!(dy[0].item(), 6.0);
//! let d2y = grad(&dy[0], &[x], false).unwrap();
//! assert_eq!(d2y[0].item(), 2.0);
//! ```

mod array;
mod finite_diff;
mod kernels;
pub mod nn;
pub mod ops;
mod primitive;
mod tape;

pub use array::Array;
pub use finite_diff::finite_diff_gradient;
pub use primitive::{forward_primitive, Primitive};
pub use tape::{grad, Grads, Tape, Tensor};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("invalid shape {shape:?}: every dimension must be positive")]
    InvalidShape { shape: Vec<usize> },
    #[error("{op}: operands belong to different tapes")]
    MixedTapes { op: &'static str },
    #[error("grad: output must hold exactly one element, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },
    #[error("grad: target {position} does not require grad")]
    NotDifferentiable { position: usize },
    #[error("grad: targets must live on the output's tape")]
    ForeignTape,
    #[error("{primitive}: expected {expected} input(s), got {got}")]
    Arity {
        primitive: &'static str,
        expected: usize,
        got: usize,
    },
}
