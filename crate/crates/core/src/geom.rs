//! Pinhole calibration, rigid poses, epipolar geometry and pose metrics.
//!
//! Poses map world to camera: `x_cam = R * X + t`. The camera looks down its
//! +z axis with x to the right and y down.

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, UnitQuaternion, Vector2, Vector3, SVD};
use thiserror::Error;

/// Minimum camera-center separation for a pair to have epipolar geometry.
pub const BASELINE_EPSILON: f64 = 1e-6;
const ORTHO_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not orthonormal with det +1 (residual {0:e})")]
    NotOrthonormal(f64),
    #[error("camera centers coincide (baseline {0:e}); epipolar geometry undefined")]
    DegeneratePair(f64),
    #[error("triangulation needs at least 2 observations, got {0}")]
    TooFewObservations(usize),
    #[error("degenerate triangulation geometry (rays parallel)")]
    DegenerateGeometry,
    #[error("triangulated point lies behind camera {0}")]
    CheiralityViolation(usize),
    #[error("epipolar threshold must be positive, got {0}")]
    InvalidThreshold(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub focal: f64,
    pub principal_point: Vector2<f64>,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(focal: f64, px: f64, py: f64, width: u32, height: u32) -> Result<Self, GeomError> {
        let intr = Self {
            focal,
            principal_point: Vector2::new(px, py),
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    /// Camera used throughout the dynamic dataset.
    pub fn paper_default() -> Self {
        Self {
            focal: 1034.0,
            principal_point: Vector2::new(672.0, 378.0),
            width: 1344,
            height: 756,
        }
    }

    /// Same field of view at a reduced resolution (`factor` > 1 shrinks).
    pub fn downscaled(&self, factor: f64) -> Self {
        let w = (self.width as f64 / factor).round() as u32;
        let h = (self.height as f64 / factor).round() as u32;
        Self {
            focal: (self.focal / factor).round(),
            principal_point: Vector2::new(w as f64 / 2.0, h as f64 / 2.0),
            width: w,
            height: h,
        }
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        if !(self.focal.is_finite() && self.focal > 0.0) {
            return Err(GeomError::InvalidIntrinsics(format!("focal {}", self.focal)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeomError::InvalidIntrinsics("zero image size".into()));
        }
        let p = self.principal_point;
        if !(p.x > 0.0 && p.y > 0.0 && p.x < self.width as f64 && p.y < self.height as f64) {
            return Err(GeomError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{}",
                p.x, p.y, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Pixel of a camera-frame point, `None` when it is not in front of the camera.
    #[inline]
    pub fn project_cam(&self, x_cam: &Vector3<f64>) -> Option<Vector2<f64>> {
        if x_cam.z <= 0.0 {
            return None;
        }
        Some(Vector2::new(
            self.focal * x_cam.x / x_cam.z + self.principal_point.x,
            self.focal * x_cam.y / x_cam.z + self.principal_point.y,
        ))
    }

    /// Camera-frame ray through `pixel` with unit z.
    #[inline]
    pub fn backproject(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.principal_point.x) / self.focal,
            (pixel.y - self.principal_point.y) / self.focal,
            1.0,
        )
    }

    #[inline]
    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= -0.5
            && pixel.y >= -0.5
            && pixel.x < self.width as f64 - 0.5
            && pixel.y < self.height as f64 - 0.5
    }
}

pub fn calibration_matrix(intr: &CameraIntrinsics) -> Matrix3<f64> {
    let f = intr.focal;
    let p = intr.principal_point;
    Matrix3::new(f, 0.0, p.x, 0.0, f, p.y, 0.0, 0.0, 1.0)
}

fn inverse_calibration(intr: &CameraIntrinsics) -> Matrix3<f64> {
    let f = intr.focal;
    let p = intr.principal_point;
    Matrix3::new(1.0 / f, 0.0, -p.x / f, 0.0, 1.0 / f, -p.y / f, 0.0, 0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeomError> {
        let residual = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det_err = (rotation.determinant() - 1.0).abs();
        if !(residual <= ORTHO_TOL && det_err <= ORTHO_TOL) || !translation.iter().all(|v| v.is_finite()) {
            return Err(GeomError::NotOrthonormal(residual.max(det_err)));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Projects an arbitrary 3x3 matrix onto SO(3) before constructing.
    pub fn orthonormalized(m: &Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeomError> {
        let svd = SVD::new(*m, true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut u2 = u;
            u2.column_mut(2).neg_mut();
            r = u2 * vt;
        }
        Self::new(r, translation)
    }

    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64, translation: Vector3<f64>) -> Result<Self, GeomError> {
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !(n.is_finite() && n > 1e-12) {
            return Err(GeomError::NotOrthonormal(f64::INFINITY));
        }
        let r = UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
        Self::new(r, translation)
    }

    /// `(w, x, y, z)` with non-negative w.
    pub fn quaternion(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation));
        let q = q.into_inner();
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.w, s * q.i, s * q.j, s * q.k]
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle_rad: f64, translation: Vector3<f64>) -> Self {
        let r = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle_rad);
        Self {
            rotation: r.into_inner(),
            translation,
        }
    }

    /// Camera at `center` looking along `forward`, with image-up close to `up`.
    pub fn looking(center: &Vector3<f64>, forward: &Vector3<f64>, up: &Vector3<f64>) -> Result<Self, GeomError> {
        let f = forward.normalize();
        let r = f.cross(up);
        if r.norm() < 1e-9 {
            return Err(GeomError::DegenerateGeometry);
        }
        let r = r.normalize();
        let d = f.cross(&r);
        let rot = Matrix3::from_rows(&[r.transpose(), d.transpose(), f.transpose()]);
        Ok(Self::from_center(rot, center))
    }

    /// Pose from a world-to-camera rotation and the camera center.
    pub fn from_center(rotation: Matrix3<f64>, center: &Vector3<f64>) -> Self {
        Self {
            rotation,
            translation: -rotation * center,
        }
    }

    #[inline]
    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    #[inline]
    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    #[inline]
    pub fn center(&self) -> Vector3<f64> {
        camera_center(self)
    }

    /// Optical axis in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    #[inline]
    pub fn transform(&self, x_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x_world + self.translation
    }

    #[inline]
    pub fn project(&self, intr: &CameraIntrinsics, x_world: &Vector3<f64>) -> Option<Vector2<f64>> {
        intr.project_cam(&self.transform(x_world))
    }

    /// World point seen at `pixel` with camera-frame depth `depth`.
    pub fn unproject(&self, intr: &CameraIntrinsics, pixel: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        let x_cam = intr.backproject(pixel) * depth;
        self.rotation.transpose() * (x_cam - self.translation)
    }

    /// Camera-to-world transform.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -rt * self.translation,
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

pub fn camera_center(pose: &Pose) -> Vector3<f64> {
    -pose.rotation.transpose() * pose.translation
}

#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Maps image-1 pixels to epipolar lines in image 2, normalized to unit Frobenius norm.
pub fn fundamental_from_poses(pose1: &Pose, pose2: &Pose, intr: &CameraIntrinsics) -> Result<Matrix3<f64>, GeomError> {
    let c1 = pose1.center();
    let c2 = pose2.center();
    let baseline = (c2 - c1).norm();
    if !(baseline > BASELINE_EPSILON) {
        return Err(GeomError::DegeneratePair(baseline));
    }
    let k_inv = inverse_calibration(intr);
    let f = k_inv.transpose() * pose2.rotation * skew(&(c2 - c1)) * pose1.rotation.transpose() * k_inv;
    let n = f.norm();
    Ok(f / n)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ResidualKind {
    Algebraic,
    #[default]
    Sampson,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpipolarConfig {
    pub residual_kind: ResidualKind,
    pub threshold: f64,
}

impl Default for EpipolarConfig {
    fn default() -> Self {
        Self {
            residual_kind: ResidualKind::Sampson,
            threshold: 4.0,
        }
    }
}

impl EpipolarConfig {
    pub fn new(residual_kind: ResidualKind, threshold: f64) -> Result<Self, GeomError> {
        if !(threshold.is_finite() && threshold > 0.0) {
            return Err(GeomError::InvalidThreshold(threshold));
        }
        Ok(Self {
            residual_kind,
            threshold,
        })
    }

    #[inline]
    pub fn is_inlier(&self, residual: f64) -> bool {
        residual < self.threshold
    }
}

pub fn epipolar_residual(u1: &Vector2<f64>, u2: &Vector2<f64>, f: &Matrix3<f64>, cfg: &EpipolarConfig) -> f64 {
    let x1 = Vector3::new(u1.x, u1.y, 1.0);
    let x2 = Vector3::new(u2.x, u2.y, 1.0);
    let fx1 = f * x1;
    let algebraic = x2.dot(&fx1);
    match cfg.residual_kind {
        ResidualKind::Algebraic => algebraic.abs(),
        ResidualKind::Sampson => {
            let ftx2 = f.transpose() * x2;
            let denom = fx1.x * fx1.x + fx1.y * fx1.y + ftx2.x * ftx2.x + ftx2.y * ftx2.y;
            if denom <= 0.0 {
                return if algebraic == 0.0 { 0.0 } else { f64::INFINITY };
            }
            algebraic.abs() / denom.sqrt()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triangulation {
    pub point: Vector3<f64>,
    /// Largest per-view reprojection distance in pixels.
    pub reprojection_error: f64,
}

pub fn triangulate(observations: &[(Pose, CameraIntrinsics, Vector2<f64>)]) -> Result<Triangulation, GeomError> {
    let n = observations.len();
    if n < 2 {
        return Err(GeomError::TooFewObservations(n));
    }
    // World-frame rays for the parallelism test.
    let rays: Vec<Vector3<f64>> = observations
        .iter()
        .map(|(pose, intr, px)| (pose.rotation.transpose() * intr.backproject(px)).normalize())
        .collect();
    let mut max_sin = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            max_sin = max_sin.max(rays[i].cross(&rays[j]).norm());
        }
    }
    if max_sin < 1e-9 {
        return Err(GeomError::DegenerateGeometry);
    }
    // DLT on normalized image coordinates; rows are unit-scaled for conditioning.
    let mut a = nalgebra::DMatrix::<f64>::zeros(2 * n, 4);
    for (i, (pose, intr, px)) in observations.iter().enumerate() {
        let m = intr.backproject(px);
        let p = pose.matrix();
        let p0 = p.row(0);
        let p1 = p.row(1);
        let p2 = p.row(2);
        let r0 = p0 - p2 * m.x;
        let r1 = p1 - p2 * m.y;
        let r0 = r0 / r0.norm().max(1e-300);
        let r1 = r1 / r1.norm().max(1e-300);
        a.row_mut(2 * i).copy_from(&r0);
        a.row_mut(2 * i + 1).copy_from(&r1);
    }
    let ata = a.transpose() * &a;
    let svd = SVD::new(ata, false, true);
    let vt = svd.v_t.ok_or(GeomError::DegenerateGeometry)?;
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    let h = vt.row(imin);
    if h[3].abs() < 1e-12 * h.norm() {
        return Err(GeomError::DegenerateGeometry);
    }
    let point = Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]);
    let mut max_err = 0.0f64;
    for (i, (pose, intr, px)) in observations.iter().enumerate() {
        let xc = pose.transform(&point);
        if xc.z <= 0.0 {
            return Err(GeomError::CheiralityViolation(i));
        }
        let proj = intr.project_cam(&xc).expect("positive depth");
        max_err = max_err.max((proj - px).norm());
    }
    Ok(Triangulation {
        point,
        reprojection_error: max_err,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseError {
    pub angle_deg: f64,
    pub distance: f64,
}

/// Relative rotation angle and camera-center distance between two poses.
pub fn pose_error(pose_a: &Pose, pose_b: &Pose) -> PoseError {
    // trace(Ra Rbᵀ) = 3 - ½‖Ra - Rb‖²_F for rotations; this form is symmetric
    // in its arguments bit for bit and exactly 3 for identical inputs.
    let diff = (pose_a.rotation - pose_b.rotation).norm_squared();
    let trace = 3.0 - 0.5 * diff;
    let cos = ((trace - 1.0) / 2.0).clamp(-1.0, 1.0);
    let angle_deg = cos.acos().to_degrees();
    let ca = pose_a.center();
    let cb = pose_b.center();
    // Sum of squared differences is symmetric under (a, b) swap.
    let distance = ((ca.x - cb.x).powi(2) + (ca.y - cb.y).powi(2) + (ca.z - cb.z).powi(2)).sqrt();
    PoseError { angle_deg, distance }
}

/// `min(1, (θ + 10 t) / 50)` with θ in degrees and t in map units.
pub fn similarity_target(err: &PoseError) -> f64 {
    ((err.angle_deg + 10.0 * err.distance) / 50.0).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn k_identity_and_paper_values() {
        let k = calibration_matrix(&CameraIntrinsics {
            focal: 1.0,
            principal_point: Vector2::zeros(),
            width: 2,
            height: 2,
        });
        assert_eq!(k, Matrix3::identity());
        let k = calibration_matrix(&CameraIntrinsics::paper_default());
        assert_eq!(k, Matrix3::new(1034.0, 0.0, 672.0, 0.0, 1034.0, 378.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 5.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 1.0, 4, 4).is_ok());
    }

    #[test]
    fn center_of_pure_translation() {
        let p = Pose::new(Matrix3::identity(), Vector3::new(1.0, 2.0, 3.0)).unwrap();
        assert_eq!(camera_center(&p), Vector3::new(-1.0, -2.0, -3.0));
        assert_eq!(camera_center(&Pose::identity()), Vector3::zeros());
    }

    #[test]
    fn pure_x_translation_fundamental() {
        let intr = CameraIntrinsics {
            focal: 1.0,
            principal_point: Vector2::zeros(),
            width: 2,
            height: 2,
        };
        let p1 = Pose::identity();
        let p2 = Pose::from_center(Matrix3::identity(), &Vector3::new(1.0, 0.0, 0.0));
        let f = fundamental_from_poses(&p1, &p2, &intr).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let expected = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -s, 0.0, s, 0.0);
        assert!((f - expected).abs().max() < 1e-15 || (f + expected).abs().max() < 1e-15);
        assert!(matches!(
            fundamental_from_poses(&p1, &p1, &intr),
            Err(GeomError::DegeneratePair(_))
        ));
    }

    #[test]
    fn pose_rejects_reflection() {
        let m = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Pose::new(m, Vector3::zeros()).is_err());
    }

    #[test]
    fn quaternion_round_trip() {
        let p = Pose::from_axis_angle(&Vector3::new(0.3, -1.0, 0.2), 1.1, Vector3::new(1.0, 2.0, 3.0));
        let q = p.quaternion();
        let p2 = Pose::from_quaternion(q[0], q[1], q[2], q[3], *p.translation()).unwrap();
        assert!((p.rotation() - p2.rotation()).abs().max() < 1e-14);
    }

    #[test]
    fn looking_points_forward() {
        let c = Vector3::new(1.0, 2.0, 1.5);
        let p = Pose::looking(&c, &Vector3::new(1.0, 0.0, 0.0), &Vector3::z()).unwrap();
        let ahead = c + Vector3::new(3.0, 0.0, 0.0);
        let xc = p.transform(&ahead);
        assert!(close(xc.x, 0.0, 1e-12) && close(xc.y, 0.0, 1e-12) && close(xc.z, 3.0, 1e-12));
        // World up maps to image up (negative y).
        let above = ahead + Vector3::z();
        assert!(p.transform(&above).y < 0.0);
    }

    #[test]
    fn pose_error_ninety_about_z() {
        let a = Pose::identity();
        let b = Pose::from_axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_2, Vector3::zeros());
        let e = pose_error(&a, &b);
        assert!(close(e.angle_deg, 90.0, 1e-9));
        assert_eq!(e.distance, 0.0);
        assert_eq!(pose_error(&b, &b), PoseError { angle_deg: 0.0, distance: 0.0 });
    }

    #[test]
    fn similarity_examples() {
        let s = |a, d| similarity_target(&PoseError { angle_deg: a, distance: d });
        assert_eq!(s(0.0, 0.0), 0.0);
        assert!(close(s(25.0, 1.5), 0.8, 1e-15));
        assert_eq!(s(60.0, 0.0), 1.0);
    }

    #[test]
    fn triangulation_degenerate_and_behind() {
        let intr = CameraIntrinsics::paper_default();
        let p = Pose::identity();
        let px = Vector2::new(700.0, 400.0);
        assert_eq!(triangulate(&[(p, intr, px), (p, intr, px)]), Err(GeomError::DegenerateGeometry));
        assert_eq!(triangulate(&[(p, intr, px)]), Err(GeomError::TooFewObservations(1)));
        // Point in front of camera 0, behind camera 1 (which faces away).
        let x = Vector3::new(0.1, 0.0, 5.0);
        let p2 = Pose::looking(&Vector3::new(1.0, 0.0, 0.0), &Vector3::new(0.0, 0.0, -1.0), &Vector3::y()).unwrap();
        let u1 = p.project(&intr, &x).unwrap();
        let xc2 = p2.transform(&x);
        assert!(xc2.z < 0.0);
        // Mirror projection so the ray still intersects the point.
        let u2 = Vector2::new(
            intr.focal * xc2.x / xc2.z + intr.principal_point.x,
            intr.focal * xc2.y / xc2.z + intr.principal_point.y,
        );
        assert_eq!(
            triangulate(&[(p, intr, u1), (p2, intr, u2)]),
            Err(GeomError::CheiralityViolation(1))
        );
    }
}
