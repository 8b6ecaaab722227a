//! Dense `f64` tensors with a reverse-mode autodiff tape.
//!
//! The crate provides the primitives a small convolutional network needs:
//! broadcasting arithmetic, reshapes and permutes, (batched) matrix products,
//! 2-D convolution, nearest upsampling, batch norm, softmax and bilinear
//! sampling, plus the Adam optimizer and a binary container format for
//! checkpoints and datasets.
//!
//! Broadcasting follows NumPy semantics. `matmul` is strictly 2-D; use `bmm`
//! for stacks of matrices.

pub mod container;
pub mod error;
mod gemm;
pub mod gradcheck;
pub mod init;
pub mod ops;
pub mod params;
pub mod tape;
pub mod tensor;

pub use container::{ArrayData, Container, NamedArray};
pub use error::{NumericsError, Result};
pub use ops::nn::BN_EPS;
pub use params::{Adam, Param, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
