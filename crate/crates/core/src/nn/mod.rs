//! Minimal reverse-mode differentiation over row-major 2-D tensors.
//!
//! A [`Tape`] records every operation of one forward pass. Calling
//! [`Tape::backward`] walks the record in reverse and returns the gradient of
//! a scalar output with respect to every node that depends on a parameter or
//! a differentiable input. Only the operations the denoiser needs are
//! provided; the heavy ones (matrix products and attention) go through a
//! strided GEMM kernel.

mod gemm;
mod tape;
mod tensor;

pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
