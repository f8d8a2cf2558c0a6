//! Trace-norm regularized least-squares regression on matrices.
//!
//! The crate solves
//!
//! ```text
//! min_W  ½ vec(W)ᵀ Σ vec(W) − tr(Wᵀ Q) + λ ‖W‖_*
//! ```
//!
//! with a smoothed Newton method certified by a duality gap, sweeps
//! regularization paths, computes the Λ-matrix rank-consistency diagnostics,
//! implements the adaptive reweighted estimator `‖A W B‖_*`, and ships a
//! seeded Monte Carlo harness that reproduces rank-consistency phenomena on
//! small synthetic problems.
//!
//! Matrices are `nalgebra::DMatrix<f64>`. `vec(·)` is column-major stacking,
//! which is the native nalgebra storage order, so `vec(x yᵀ) = y ⊗ x`.

pub mod adaptive;
pub mod consistency;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod par;
pub mod problem;
pub mod simulation;
pub mod solver;
pub mod spectral;

pub use error::{Error, Result};
pub use problem::{EmpiricalMoments, Observation};
pub use solver::{SolveResult, SolverConfig};
pub use spectral::SvdTriple;
