//! Monte Carlo variational inference with Langevin kernels.
//!
//! Evidence estimators built from annealed bridges between a variational
//! density and an unnormalized joint: sequential importance sampling driven
//! by unadjusted Langevin moves, annealed importance sampling driven by
//! Metropolis-adjusted Langevin moves, and unbiased gradients of both lower
//! bounds. Every routine is generic over [`diffmath::Real`], so one code path
//! serves plain evaluation and reverse-mode differentiation.

pub mod annealing;
pub mod diffmath;
pub mod error;
pub mod estimators;
pub mod gradients;
pub mod io;
pub mod kernels;
pub mod models;
pub mod problem;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
