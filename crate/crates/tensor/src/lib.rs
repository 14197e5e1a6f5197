//! Dense `f64` tensors with a reverse-mode gradient tape.
//!
//! The tape records every operation applied to [`Var`] handles and replays
//! the local adjoint rules in reverse insertion order on [`Tape::backward`].
//! Layout is row-major; convolution uses the cross-correlation convention
//! (no kernel flip).

mod error;
pub mod kernels;
mod tape;
mod tensor;

pub use error::TensorError;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
