//! Reverse-mode automatic differentiation on a recorded tape.
//!
//! Backward rules are themselves expressed with recorded ops, so any gradient
//! obtained with [`GradMode::CreateGraph`] can be differentiated again. This
//! is what makes losses on input-gradient explanations trainable.

mod dft;
mod kernels;
mod tape;
mod tensor;

pub use dft::{dft, dft_matrices, idft, idft_complex, ComplexVector};
pub use tape::{expect_shape, grad, GradMode, Tape, Var};
pub use tensor::Tensor;
