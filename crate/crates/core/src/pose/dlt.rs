//! Linear (DLT) pose from six or more 2D-3D correspondences.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Vector3, SVD};

use crate::geom::Pose;

/// Smallest-to-largest covariance eigenvalue ratio below which the points
/// are treated as planar and the DLT is not attempted.
pub const PLANARITY_RATIO: f64 = 1e-6;

pub fn is_near_planar(points: &[Vector3<f64>]) -> bool {
    if points.len() < 4 {
        return true;
    }
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigenvalues();
    let max = eig.max();
    !(max > 0.0) || eig.min() < PLANARITY_RATIO * max
}

/// Pose from normalized image rays (`(x/z, y/z)` in camera frame) and world points.
pub fn dlt_pose(rays: &[(f64, f64)], points: &[Vector3<f64>]) -> Option<Pose> {
    let n = rays.len();
    if n < 6 || points.len() != n || is_near_planar(points) {
        return None;
    }
    // Condition world points: center and scale to mean distance √3.
    let mean = points.iter().fold(Vector3::zeros(), |a, p| a + p) / n as f64;
    let spread = points.iter().map(|p| (p - mean).norm()).sum::<f64>() / n as f64;
    if !(spread > 0.0) {
        return None;
    }
    let s = 3f64.sqrt() / spread;
    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for (i, ((u, v), p)) in rays.iter().zip(points).enumerate() {
        let q = (p - mean) * s;
        let x = [q.x, q.y, q.z, 1.0];
        for k in 0..4 {
            a[(2 * i, k)] = x[k];
            a[(2 * i, 8 + k)] = -u * x[k];
            a[(2 * i + 1, 4 + k)] = x[k];
            a[(2 * i + 1, 8 + k)] = -v * x[k];
        }
    }
    let ata = a.transpose() * &a;
    let eig = ata.symmetric_eigen();
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &e)| if e < acc.1 { (i, e) } else { acc });
    let h = eig.eigenvectors.column(imin);
    let mut p = Matrix3x4::zeros();
    for r in 0..3 {
        for c in 0..4 {
            p[(r, c)] = h[4 * r + c];
        }
    }
    // Undo conditioning: P_world = P_norm * [sI, -s·mean; 0, 1].
    let m = p.fixed_view::<3, 3>(0, 0).into_owned() * s;
    let t_col = p.column(3).into_owned() - m * mean;
    let mut m = m;
    let mut t_col = t_col;
    if m.determinant() < 0.0 {
        m = -m;
        t_col = -t_col;
    }
    let svd = SVD::new(m, true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let scale = svd.singular_values.mean();
    if !(scale > 0.0) {
        return None;
    }
    let r = u * vt;
    if r.determinant() <= 0.0 {
        return None;
    }
    let t = t_col / scale;
    Pose::new(r, t).ok()
}
