//! Direction-of-arrival estimation with partially-calibrated sparse subarrays.
//!
//! Each subarray is internally coherent but carries an unknown phase offset
//! relative to the others, so only per-subarray second-order statistics are
//! usable. The pipeline is:
//!
//! 1. [`geometry`]: build sparse subarray layouts and their difference coarrays.
//! 2. [`sigmodel`]: steering vectors, exact covariances and snapshot simulation.
//! 3. [`coarray`]: map each covariance to the coarray domain, spatially smooth,
//!    and split into signal/noise subspaces.
//! 4. [`estimators`]: GCA-MUSIC (block-diagonal subspace merge) and the G-MUSIC
//!    and AVCA-MUSIC baselines.
//! 5. [`harness`]: Monte Carlo RMSE sweeps over SNR, geometry and algorithm.

pub mod coarray;
pub mod error;
pub mod estimators;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod sigmodel;

pub use error::{Error, Result};
pub use num_complex::Complex64;
