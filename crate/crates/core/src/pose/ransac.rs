//! Locally optimized RANSAC over P3P hypotheses.

use nalgebra::{Matrix2x3, Matrix2x6, Matrix3, Matrix6, Rotation3, Vector3, Vector6};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{dlt_pose, p3p, Correspondence2D3D, PoseCandidate, PoseEstimationError};
use crate::geom::{CameraIntrinsics, Pose};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacConfig {
    /// Inlier reprojection threshold in pixels.
    pub threshold: f64,
    pub max_iters: usize,
    pub confidence: f64,
    pub lo_rounds: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold: 6.0,
            max_iters: 10_000,
            confidence: 0.99,
            lo_rounds: 10,
            seed: 0,
        }
    }
}

struct Score {
    count: usize,
    /// Sum of squared errors over inliers; breaks count ties.
    sse: f64,
}

fn score(pose: &Pose, intr: &CameraIntrinsics, corrs: &[Correspondence2D3D], thr2: f64) -> Score {
    let mut count = 0;
    let mut sse = 0.0;
    for c in corrs {
        if let Some(e2) = reprojection_error2(pose, intr, c) {
            if e2 < thr2 {
                count += 1;
                sse += e2;
            }
        }
    }
    Score { count, sse }
}

#[inline]
fn reprojection_error2(pose: &Pose, intr: &CameraIntrinsics, c: &Correspondence2D3D) -> Option<f64> {
    pose.project(intr, &c.point).map(|p| (p - c.pixel).norm_squared())
}

/// Indices of correspondences reprojecting within `threshold` pixels.
pub fn inliers_of(pose: &Pose, intr: &CameraIntrinsics, corrs: &[Correspondence2D3D], threshold: f64) -> Vec<usize> {
    let thr2 = threshold * threshold;
    corrs
        .iter()
        .enumerate()
        .filter(|(_, c)| reprojection_error2(pose, intr, c).is_some_and(|e| e < thr2))
        .map(|(i, _)| i)
        .collect()
}

fn better(a: &Score, b: &Score) -> bool {
    a.count > b.count || (a.count == b.count && a.sse < b.sse)
}

fn required_iterations(inlier_ratio: f64, confidence: f64, cap: usize) -> usize {
    if inlier_ratio >= 1.0 {
        return 1;
    }
    let w3 = inlier_ratio.powi(3);
    if w3 <= 0.0 {
        return cap;
    }
    let n = (1.0 - confidence).ln() / (1.0 - w3).ln();
    if !n.is_finite() {
        return cap;
    }
    (n.ceil() as usize).clamp(1, cap)
}

/// Gauss-Newton steps on the summed squared reprojection error of `inliers`,
/// with the rotation updated on the left. `None` when the normal equations
/// are singular or a step leaves a point behind the camera.
fn refine_reprojection(
    start: &Pose,
    intr: &CameraIntrinsics,
    corrs: &[Correspondence2D3D],
    inliers: &[usize],
    steps: usize,
) -> Option<Pose> {
    if inliers.len() < 4 {
        return None;
    }
    let mut r = *start.rotation();
    let mut t = *start.translation();
    for _ in 0..steps {
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for &i in inliers {
            let c = &corrs[i];
            let rx = r * c.point;
            let xc = rx + t;
            let px = intr.project_cam(&xc)?;
            let e = px - c.pixel;
            let fz = intr.focal / xc.z;
            let dp = Matrix2x3::new(fz, 0.0, -fz * xc.x / xc.z, 0.0, fz, -fz * xc.y / xc.z);
            let mut j = Matrix2x6::<f64>::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dp * -rx.cross_matrix()));
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dp);
            h += j.transpose() * j;
            g += j.transpose() * e;
        }
        let delta = h.cholesky()?.solve(&-g);
        let omega = Vector3::new(delta[0], delta[1], delta[2]);
        r = Rotation3::new(omega).matrix() * r;
        t += Vector3::new(delta[3], delta[4], delta[5]);
        if delta.norm() < 1e-12 {
            break;
        }
    }
    let pose = Pose::orthonormalized(&Matrix3::from(r), t).ok()?;
    inliers.iter().all(|&i| pose.project(intr, &corrs[i].point).is_some()).then_some(pose)
}

/// Iterative DLT refits on the inlier set followed by reprojection-error
/// refinement, each accepted only when it does not lose inliers.
fn local_optimize(
    start: Pose,
    start_score: Score,
    intr: &CameraIntrinsics,
    corrs: &[Correspondence2D3D],
    cfg: &RansacConfig,
) -> (Pose, Score) {
    let thr2 = cfg.threshold * cfg.threshold;
    let mut best = start;
    let mut best_score = start_score;
    let mut inliers = inliers_of(&best, intr, corrs, cfg.threshold);
    for _ in 0..cfg.lo_rounds {
        if inliers.len() < 6 {
            break;
        }
        let rays: Vec<(f64, f64)> = inliers
            .iter()
            .map(|&i| {
                let b = intr.backproject(&corrs[i].pixel);
                (b.x, b.y)
            })
            .collect();
        let pts: Vec<Vector3<f64>> = inliers.iter().map(|&i| corrs[i].point).collect();
        let Some(refit) = dlt_pose(&rays, &pts) else {
            break;
        };
        let s = score(&refit, intr, corrs, thr2);
        if s.count < best_score.count || !better(&s, &best_score) {
            break;
        }
        let next = inliers_of(&refit, intr, corrs, cfg.threshold);
        best = refit;
        best_score = s;
        if next == inliers {
            break;
        }
        inliers = next;
    }
    for _ in 0..cfg.lo_rounds {
        let Some(refit) = refine_reprojection(&best, intr, corrs, &inliers, 5) else {
            break;
        };
        let s = score(&refit, intr, corrs, thr2);
        if s.count < best_score.count || !better(&s, &best_score) {
            break;
        }
        let next = inliers_of(&refit, intr, corrs, cfg.threshold);
        best = refit;
        best_score = s;
        if next == inliers {
            break;
        }
        inliers = next;
    }
    (best, best_score)
}

/// Deterministic given `cfg.seed`. The returned candidate's inliers are
/// recomputed from its final pose.
pub fn estimate_absolute_pose(
    corrs: &[Correspondence2D3D],
    intr: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<PoseCandidate, PoseEstimationError> {
    if corrs.len() < 4 {
        return Err(PoseEstimationError::InsufficientCorrespondences {
            needed: 4,
            got: corrs.len(),
        });
    }
    if !(cfg.threshold > 0.0) || cfg.max_iters == 0 || !(cfg.confidence > 0.0 && cfg.confidence < 1.0) {
        return Err(PoseEstimationError::InvalidConfig(format!("{cfg:?}")));
    }
    let thr2 = cfg.threshold * cfg.threshold;
    let bearings: Vec<Vector3<f64>> = corrs.iter().map(|c| intr.backproject(&c.pixel)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Pose, Score)> = None;
    let mut cap = cfg.max_iters;
    let mut iter = 0;
    while iter < cap {
        iter += 1;
        let idx = sample(&mut rng, corrs.len(), 3);
        let (i, j, k) = (idx.index(0), idx.index(1), idx.index(2));
        let world = [corrs[i].point, corrs[j].point, corrs[k].point];
        let bear = [bearings[i], bearings[j], bearings[k]];
        let Some(sols) = p3p::solve(&world, &bear) else {
            continue;
        };
        for (r, t) in sols {
            let Ok(pose) = Pose::orthonormalized(&r, t) else {
                continue;
            };
            let s = score(&pose, intr, corrs, thr2);
            if s.count < 4 {
                continue;
            }
            let improves = best.as_ref().is_none_or(|(_, b)| better(&s, b));
            if !improves {
                continue;
            }
            let (p, s) = local_optimize(pose, s, intr, corrs, cfg);
            cap = required_iterations(s.count as f64 / corrs.len() as f64, cfg.confidence, cfg.max_iters);
            best = Some((p, s));
        }
    }
    let (pose, _) = best.ok_or(PoseEstimationError::NoModelFound)?;
    let inlier_indices = inliers_of(&pose, intr, corrs, cfg.threshold);
    if inlier_indices.len() < 4 {
        return Err(PoseEstimationError::NoModelFound);
    }
    Ok(PoseCandidate {
        pose,
        inlier_count: inlier_indices.len(),
        inlier_indices,
        source_image: String::new(),
    })
}
