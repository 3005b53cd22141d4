//! Variable selection for functional linear quantile regression.
//!
//! The library fits quantile regressions with multiple scalar and functional
//! covariates, selecting variables through a group minimax concave penalty on
//! FPCA score blocks and a Huber-smoothed check loss. It also ships group
//! LASSO quantile and least-squares baselines, EBIC tuning, diurnal L-moment
//! feature extraction for minute-level activity data, and a Monte Carlo
//! harness that reproduces the reference simulation benchmarks.
//!
//! Module map:
//! - [`funcdata`] — functional datasets, FPCA, score extraction
//! - [`losspen`] — losses, penalties, thresholding operators
//! - [`solver`] — group descent, lambda paths, EBIC selection
//! - [`model`] — the end-to-end pipeline, prediction, serialization
//! - [`lmoments`] — sample and diurnal L-moments
//! - [`simbench`] — scenario generators, metrics, Monte Carlo runner
//! - [`io`] — CSV schemas shared with the command-line tool

pub mod error;
pub mod funcdata;
pub mod io;
pub mod lmoments;
pub mod losspen;
pub mod model;
pub mod simbench;
pub mod solver;

pub use error::{Error, Result};
