//! Exact Gaussian-process regression with configurable "greyness" — how
//! much physical knowledge the kernel encodes — plus a benchmark harness
//! that measures the training-data coverage each model needs to hit an
//! error threshold and converts measured runtime into energy and CO2e
//! estimates.
//!
//! The library is organised around the study it supports:
//!
//! - [`kernels`]: squared exponential, periodic, and product covariance
//!   functions with analytic hyperparameter derivatives.
//! - [`gp`]: Cholesky-based marginal likelihood, gradients, posterior
//!   prediction, and the NMSE metric.
//! - [`training`]: constraint transforms, ADAM ascent, and the nine-run
//!   multi-start protocol.
//! - [`dataset`]: the synthetic benchmark surface, coverage-banded
//!   sampling, evaluation grids, and CSV ingestion for external data.
//! - [`presets`]: the Black-1 / Grey-1 / Grey-2 model family.
//! - [`carbon`]: TDP-based constant-power energy and emissions estimates.
//! - [`sweep`]: the (model x coverage) experiment grid, threshold search,
//!   and report assembly.
//!
//! Requires a system OpenBLAS at link time (`libopenblas-dev` on Debian
//! family systems).

pub mod carbon;
pub mod config;
pub mod dataset;
pub mod error;
pub mod gp;
pub mod gradcheck;
pub mod kernels;
mod linalg;
pub mod presets;
pub mod report;
pub mod sweep;
pub mod training;

pub use error::{Error, Result};
