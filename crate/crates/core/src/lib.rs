//! Stein-operator control variates for post-processing Monte Carlo and MCMC output.
//!
//! Given samples `θ₁..θ_S`, the score `∇log π(θᵢ)` at each sample and integrand
//! values `f(θᵢ)`, the estimators here return lower-variance estimates of
//! `E_π[f]` than the sample mean:
//!
//! - [`zvcv::fit_zvcv`]: polynomial zero-variance control variates by least squares.
//! - [`zvcv::fit_zvcv_regularised`]: the same with a ridge or LASSO penalty.
//! - [`ensemble::fit_ensemble`]: averages of ZVCV learners on random column subsets.
//!
//! [`targets`] and [`eval`] supply synthetic targets, samplers and a benchmark harness.

// `!(x > y)` is used on purpose so NaN falls into the rejection branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod cli;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod io;
pub mod method;
pub mod regression;
pub mod stein;
pub mod targets;
pub mod zvcv;

pub use error::{Error, Result};
