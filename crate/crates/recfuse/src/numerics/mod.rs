//! Dense f64 tensors with reverse-mode gradient accumulation.
//!
//! Everything trainable in this crate (the graph expert, the surrogate LM,
//! the injection map) runs on this engine. All math is 64-bit; the
//! finite-difference checker in [`gradcheck`] is the reference every op is
//! validated against.

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use checkpoint::{load_params, read_container, save_params, write_container};
pub use gradcheck::grad_check;
pub use optim::{AdamWConfig, ParamStore};
pub use tape::{sigmoid_scalar, softmax_slice, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected {expected}, got shape {got:?}")]
    BadShape {
        op: &'static str,
        expected: &'static str,
        got: Vec<usize>,
    },
    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },
    #[error("{op}: index {index} out of bounds for dimension of size {size}")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        size: usize,
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("duplicate parameter {0:?}")]
    DuplicateParam(String),
    #[error("zero-norm vector in {op}")]
    ZeroNorm { op: &'static str },
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint payload corrupt: {0}")]
    Corrupt(String),
}
