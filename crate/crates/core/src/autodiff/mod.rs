//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Values are recorded on a [`Tape`] in evaluation order; [`Tape::backward`] sweeps the
//! record once in reverse and leaves an adjoint on every node that requires grad.
//! Parameters live outside the tape as [`Parameter`]s and are copied in per forward pass.
//!
//! # Broadcasting
//!
//! `add`, `sub`, `mul` and `div` follow numpy rules: shapes are aligned on their trailing
//! dimensions, and each pair of extents must be equal or contain a 1. Rank-0 tensors
//! broadcast against anything. Gradients are summed back over the broadcast axes.
//! Every other primitive documents its own shape contract and reports a
//! [`Error::ShapeMismatch`](crate::Error::ShapeMismatch) or
//! [`Error::InvalidShape`](crate::Error::InvalidShape) naming the offending shapes.
//!
//! # Subgradients
//!
//! `relu` passes no gradient at exactly 0; `max_scalar(x, s)` passes the gradient to `x`
//! when `x == s`. Both are fixed so that finite-difference checks are reproducible.

pub mod checkpoint;
pub mod gradcheck;
mod ops;
mod param;
mod tape;
mod tensor;

#[cfg(test)]
mod prop_tests;

pub use gradcheck::{check_gradient, grad_check, relative_error, CheckStatus, GradCheckConfig, GradCheckReport};
pub use ops::{fast_fft_len, softmax_rows, BatchNormState, ConvMode, FrameEnergySpec, NormMode};
pub(crate) use ops::RealFft;
pub use param::Parameter;
pub use tape::{Tape, Var};
pub use tensor::{broadcast_shape, Tensor};
