//! Perspective-n-point pose estimation with the optimally weighted direct
//! linear transform (oDLT).
//!
//! The crate provides the classical and normalized DLT, the weighted oDLT
//! variant whose rows are scaled by analytic maximum-likelihood weights, a
//! weighted Procrustes projection onto SO(3), a linear translation
//! re-triangulation, and a Gauss-Newton reprojection refiner used as the
//! optimality reference. The [`evaluation`] and [`colmap`] modules hold the
//! synthetic Monte Carlo harness and the COLMAP text-model reader used to
//! benchmark the solvers.
//!
//! ```
//! use nalgebra::Vector3;
//! use odlt::evaluation::{generate_scene, SyntheticScenario};
//! use odlt::solvers::{solve_odlt_lost, SolverConfig};
//!
//! let scenario = SyntheticScenario::centered(50, 1.0, 1, 7);
//! let (cs, truth) = generate_scene(&scenario, 0);
//! let result = solve_odlt_lost(&cs, &scenario.intrinsics, &SolverConfig::default()).unwrap();
//! assert!((result.pose.center() - truth.center()).norm() < 0.5);
//! ```

// Range checks are written as `!(x >= lo)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod colmap;
pub mod dlt;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod normalization;
pub mod se3;
pub mod solvers;
pub mod weighting;

#[cfg(test)]
mod test_support;

pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, Correspondence, Pose, ProjectionMatrix};
pub use solvers::{Method, PnpResult, SolverConfig};
