//! Kernel-smoothed estimation of extreme conditional quantiles.
//!
//! The crate estimates the conditional survival function and its quantiles
//! by locally weighting observations around a covariate point, fits the
//! tail with a refined Pickands-type estimator built from log-spacings of
//! intermediate quantiles, and extrapolates beyond the observed range.
//! A local generalized-Pareto maximum-likelihood fit is included as a
//! benchmark, along with data-driven smoothing-parameter selection and a
//! Monte Carlo harness with closed-form scenarios.
//!
//! Modules:
//! - [`kernel`]: compactly supported product-free radial kernels (triweight).
//! - [`conditional`]: local windows, survival curves, and quantile inversion.
//! - [`evt`]: the K-calculus (Box–Cox-type transform), spacing covariance
//!   algebra, and extrapolation variance factors.
//! - [`pickands`]: the refined Pickands tail-index/scale estimator and
//!   quantile extrapolation.
//! - [`gp`]: local generalized-Pareto exceedance likelihood and fitting.
//! - [`selection`]: cross-validated and level-adjusted bandwidths plus
//!   stability-based (h, k) selection.
//! - [`simulation`]: scenario generators, metrics, and the replication
//!   engine.

pub mod conditional;
pub mod error;
pub mod evt;
pub mod gp;
pub mod kernel;
pub mod pickands;
pub mod selection;
pub mod simulation;

pub use error::{Error, Result};
