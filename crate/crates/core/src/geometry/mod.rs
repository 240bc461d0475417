//! Pinhole camera math, minimal and nonlinear PnP, and pose error metrics.

mod camera;
pub mod p3p;
pub mod refine;

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

pub use camera::{camera_center, pose_error, project, CameraIntrinsics, Pose, MIN_DEPTH};
pub use p3p::solve_p3p;
pub use refine::{refine_pnp, refine_pnp_with, RefineConfig, Refinement};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid camera intrinsics {0:?}")]
    InvalidIntrinsics(CameraIntrinsics),
    #[error("degenerate point configuration")]
    DegenerateConfiguration,
    #[error("no admissible real solution")]
    NoRealSolution,
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewCorrespondences { needed: usize, got: usize },
    #[error("non-finite residuals during refinement")]
    NumericalFailure,
}

/// A pixel observation paired with a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub pixel: Vector2<f64>,
    pub point: Vector3<f64>,
}

impl Correspondence {
    pub fn new(pixel: Vector2<f64>, point: Vector3<f64>) -> Self {
        Self { pixel, point }
    }
}
