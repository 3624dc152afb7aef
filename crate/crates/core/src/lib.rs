//! Targetless LiDAR-camera calibration through a ground-plane homography.
//!
//! The flow is: oracle correspondences are block-sampled and fit robustly
//! ([`pipeline::coarse_calibrate`]); the stream is then re-matched against
//! the best matrix and recalibrated every N frames under an error guard
//! ([`iterative`]); finally a multiplicative correction `H* = H * HΔ` is
//! fitted to implicit nearest-neighbour pairings ([`correction`]). The
//! [`sim`] module generates scenes with a known homography to check all of
//! it.

pub mod association;
pub mod cli;
pub mod config;
pub mod correction;
pub mod error;
pub mod geometry;
pub mod io;
pub mod iterative;
pub mod pipeline;
pub mod robust;
pub mod sampling;
pub mod sim;
mod solver;

pub use error::{CalibError, Result};
pub use geometry::{
    estimate_homography, refine_homography, reprojection_metrics, Correspondence, Homography, PixelPoint, PlanePoint,
    ResidualReport, Source,
};
pub use solver::SolverSettings;
