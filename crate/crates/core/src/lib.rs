//! Goodness-of-fit testing for Gaussian latent tree models.
//!
//! The crate enumerates the polynomial constraints that characterise the
//! covariance matrices of a latent tree ([`tree`]), checks tree metrics
//! ([`metric`]), builds and samples model covariances ([`model`]), forms
//! unbiased per-sample estimates of the constraint polynomials
//! ([`estimators`]) and calibrates a studentised sup-norm statistic with a
//! Gaussian multiplier bootstrap ([`bootstrap`]).

pub mod bootstrap;
pub mod estimators;
pub mod metric;
pub mod model;
pub mod poly;
pub mod seed;
pub mod simulation;
pub mod tree;

pub use nalgebra;

pub use tree::{enumerate_constraints, ConstraintSystem, LatentTree, NodeId};
