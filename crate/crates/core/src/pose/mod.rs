//! Absolute pose from 2D-3D correspondences: P3P, LO-RANSAC and candidate ordering.

mod dlt;
mod p3p;
mod ransac;

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use crate::geom::{CameraIntrinsics, Pose};

pub use dlt::{dlt_pose, is_near_planar};
pub use ransac::{estimate_absolute_pose, inliers_of, RansacConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseEstimationError {
    #[error("the three world points are collinear")]
    CollinearPoints,
    #[error("need at least {needed} correspondences, got {got}")]
    InsufficientCorrespondences { needed: usize, got: usize },
    #[error("no model with at least 4 inliers")]
    NoModelFound,
    #[error("invalid RANSAC configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence2D3D {
    pub pixel: Vector2<f64>,
    pub point: Vector3<f64>,
    pub source_track: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseCandidate {
    pub pose: Pose,
    pub inlier_count: usize,
    pub inlier_indices: Vec<usize>,
    pub source_image: String,
}

/// All real P3P solutions for three correspondences.
pub fn solve_p3p(corrs: &[Correspondence2D3D; 3], intr: &CameraIntrinsics) -> Result<Vec<Pose>, PoseEstimationError> {
    let world = [corrs[0].point, corrs[1].point, corrs[2].point];
    let bearings = [
        intr.backproject(&corrs[0].pixel),
        intr.backproject(&corrs[1].pixel),
        intr.backproject(&corrs[2].pixel),
    ];
    let sols = p3p::solve(&world, &bearings).ok_or(PoseEstimationError::CollinearPoints)?;
    Ok(sols
        .into_iter()
        .filter_map(|(r, t)| Pose::orthonormalized(&r, t).ok())
        .collect())
}

/// Descending inlier count, ties by ascending source image id.
pub fn sort_candidates(mut cands: Vec<PoseCandidate>) -> Vec<PoseCandidate> {
    cands.sort_by(|a, b| {
        b.inlier_count
            .cmp(&a.inlier_count)
            .then_with(|| a.source_image.cmp(&b.source_image))
    });
    cands
}
