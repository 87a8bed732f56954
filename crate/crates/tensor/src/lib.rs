//! Reverse-mode automatic differentiation over dense row-major tensors.
//!
//! Operations are recorded on the fly; calling [`Tensor::backward`] on a
//! scalar walks the recorded graph once and returns the gradients of every
//! trainable leaf. Convolutions are lowered to `im2col` + GEMM.

mod element;
mod ops;
mod tensor;

pub use element::Element;
pub use tensor::{Gradients, Tensor};
