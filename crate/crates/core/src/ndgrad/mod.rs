//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! Supports exactly the operation set the probe heads need: matmul,
//! elementwise arithmetic, a few pointwise nonlinearities, axis
//! reductions, softmax, concatenation and vector broadcasts. Graphs are
//! recorded eagerly on a [`Tape`] and consumed by a single backward pass.
//!
//! Tensors are 64-bit, row-major, at most 4 axes. A [`Tape`] is confined
//! to one thread; [`Tensor`] values are plain data and freely shared.

mod check;
mod tape;
mod tensor;

pub use check::grad_check;
pub use tape::{concat, Tape, Var};
pub use tensor::Tensor;

/// Epsilon added under the square root of the last-axis L2 norm so that
/// all-zero rows stay differentiable (cosine with a zero vector is 0).
pub const NORM_EPSILON: f64 = 1e-12;
