//! Partial multi-label learning by feature-label modal alignment (PML-MA).
//!
//! A linear multi-label classifier is learned from features whose candidate
//! label sets contain false positives. The candidate matrix is decomposed into
//! an orthogonal basis and a low-rank pseudo-label matrix, features and
//! pseudo-labels are aligned in a shared subspace both globally and across
//! k-nearest-neighbor neighborhoods, and multi-peak class prototypes sharpen
//! the pseudo-labels. All blocks are solved by alternating minimization.
//!
//! Modules:
//! - [`linalg`]: SVD, polar factor, Sylvester solver, singular value thresholding.
//! - [`graph`]: Gaussian kNN similarity graph and its degree matrix.
//! - [`dataio`]: dataset formats, noise injection, standardization, fold plans.
//! - [`solver`]: objective, block updates, the alternating driver, prediction.
//! - [`metrics`]: the five multi-label ranking/classification metrics.
//! - [`experiment`]: cross-validation, grid search and ablation harness.
//! - [`cli`]: command-line front end.

pub mod cli;
pub mod dataio;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod solver;

pub use error::{PmlError, Result};
pub use linalg::Mat;
