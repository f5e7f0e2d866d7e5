//! Reverse-mode automatic differentiation over dense row-major tensors.
//!
//! A [`Graph`] records operations as they are evaluated; [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients into a [`ParamSet`].
//! The op set is small on purpose: dense and 1D-convolutional layers,
//! pooling, elementwise activations, softmax/row normalization for
//! attention, and a fused planar pose-composition chain.
//!
//! Everything is generic over [`Scalar`] so the same model code runs in
//! `f32` for training and `f64` for tight finite-difference checks.

mod adam;
pub mod checks;
mod gradcheck;
mod graph;
mod kernels;
mod params;
mod scalar;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_mixed, rel_err, GradCheckReport, Objective, Sampling};
pub use graph::{Graph, Var};
pub use kernels::wrap;
pub use params::ParamSet;
pub use scalar::Scalar;
pub use tensor::{Result, Tensor, TensorError};
