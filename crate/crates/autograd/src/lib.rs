//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The op set is deliberately small: what a convolution/attention/scan
//! restoration network needs, each with a hand-written adjoint.

pub mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape {left:?} incompatible with {right:?}")]
    ShapeMismatch {
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
    #[error("shape {shape:?} does not hold {len} elements")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: shape {shape:?} not divisible by {factor}")]
    NotDivisible {
        op: &'static str,
        shape: Vec<usize>,
        factor: usize,
    },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
