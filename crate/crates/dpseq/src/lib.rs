//! Differentially private sequential change-point detection over multiple
//! data streams.
//!
//! The detector runs a per-stream CUSUM recursion on truncated log-likelihood
//! ratios, sums the statistics, adds calibrated Laplace noise, and stops at
//! the first noisy threshold crossing. The crate provides the detector
//! engine, noise calibration, theoretical ARL/delay bounds, a reproducible
//! Monte Carlo harness, a real-data fitting pipeline
//! (standardize -> PCA -> Gaussian), and a privacy audit harness. The `dpseq`
//! binary exposes all of it.

pub mod audit;
pub mod bounds;
pub mod data;
pub mod engine;
pub mod error;
pub mod formats;
pub mod mc;
pub mod model;
pub mod noise;
pub mod presets;
pub mod quad;
pub mod report;

pub use error::{Error, Result};
