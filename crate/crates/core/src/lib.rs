//! Spatiotemporal double machine learning for difference-in-differences on
//! gridded two-period data.
//!
//! The pipeline residualizes the two-period outcomes and the binary treatment
//! on covariates with cross-fitted Bayesian tree ensembles (optionally
//! augmented with coordinates and a Wendland spatial embedding), then
//! regresses outcome residuals on treatment residuals and their neighborhood
//! means to estimate the treatment effect with heteroskedasticity-robust
//! standard errors. OLS and spatial difference-in-differences baselines, the
//! simulation designs, and a Monte Carlo comparison harness live alongside.

pub mod error;
pub mod gausfield;
pub mod lattice;
pub mod rng;

pub use error::{Error, Result};

pub mod cli;
pub mod dgp;
pub mod dml;
pub mod mc;
pub mod treelearn;
