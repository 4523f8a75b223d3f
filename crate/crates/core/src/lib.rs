//! Unbiased randomized vector-Jacobian products.
//!
//! Backpropagation through a linear layer maps the output gradient `G` to the
//! input and parameter gradients. This crate replaces that exact map with
//! random sketches `R` satisfying `E[R] = I`, so every estimated gradient stays
//! unbiased while the backward pass only touches `r` selected directions.
//!
//! Layout of the crate:
//!
//! * [`linalg`]: dense column-major matrices, Jacobi eigen/singular value
//!   decompositions and PSD square roots.
//! * [`budget`]: the water-filling allocation of sampling probabilities and
//!   the samplers (systematic exact-`r`, independent Bernoulli).
//! * [`sketch`]: the operator catalogue (masks, proxy sketches, diagonal and
//!   rank-constrained sketches) and the optimal unbiased low-rank sketch.
//! * [`autodiff`]: a small reverse-mode MLP engine whose linear layers can
//!   route their backward pass through a sketch.
//! * [`analysis`]: distortion estimates, the variance-propagation
//!   decomposition and the variance/efficiency trade-off formulas.
//! * [`data`]: MNIST IDX parsing and synthetic gaussian blobs.

pub mod analysis;
pub mod autodiff;
pub mod budget;
pub mod data;
mod error;
pub use error::IdxErrorKind;
pub mod linalg;
pub mod rng;
pub mod sketch;
pub mod stats;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, DenseVector};
pub use sketch::{Budget, GradBatch, SketchKind, SketchOperatorSpec};

