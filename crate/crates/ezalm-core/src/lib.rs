//! Consumption-investment with Epstein-Zin preferences, a terminal liability
//! and an unobserved mean-reverting market price of risk.
//!
//! The market price of risk is filtered from observations (Kalman-Bucy with a
//! closed-form Riccati variance), the optimal wealth/liability pair solves a
//! coupled FBSDE with an explicit solution driven by three auxiliary processes
//! (a stochastic exponential `H`, a discount-adjusted coefficient `alpha` and
//! a growth factor `phi`), and the hedging control `Z` is recovered from
//! explicit Malliavin kernels via the Clark-Ocone formula under a change of
//! measure. Everything downstream of the filter reduces to four scalar
//! expectations estimated by seeded, deterministic Monte Carlo.
//!
//! Module map:
//! - [`model`]: parameters, derived coefficients and pointwise market formulas
//! - [`filter`]: Riccati variance curve and parameter-admissibility bounds
//! - [`paths`]: seeded path simulation of the observable system
//! - [`mc`]: deterministic parallel Monte Carlo reduction and term estimates
//! - [`control`]: optimal consumption/portfolio and the value function
//! - [`malliavin`]: derivative kernels and the Clark-Ocone `Z` estimator
//! - [`welfare`]: welfare-loss metric and parameter sweeps
//! - [`config`]: flat `key = value` run configuration files

// float gates written as `!(x > y)` are intentional: they also route NaN
// into the error branch, which `x <= y` would not
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod control;
pub mod error;
pub mod filter;
pub mod malliavin;
pub mod mc;
pub mod model;
pub mod paths;
pub mod welfare;

pub use error::CoreError;

/// Crate version, embedded in CSV run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
