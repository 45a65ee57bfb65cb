//! Total-variation regularization via synthesis.
//!
//! Piecewise-constant signals are sparse under the first-order difference
//! operator. This crate turns that analysis-form prior into a synthesis one:
//! the difference operator's dense pseudoinverse acts as the dictionary, and
//! the one degree of freedom it cannot represent (the mean) is restored by
//! an exact scalar adjustment. On top of that sit two estimator families --
//! an l1-regularized MAP baseline and a sparse Bayesian learning solver that
//! infers its own hyperparameters -- plus phantom generators, seeded noise
//! injection, and an experiment harness for denoising studies.

pub mod error;
pub mod harness;
pub mod linops;
pub mod noise;
pub mod phantoms;
pub mod sbl;
pub mod solvers;

pub use error::{Error, Result};
