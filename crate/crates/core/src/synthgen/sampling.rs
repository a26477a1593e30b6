//! Camera placement: panorama-style sweeps for the database and
//! horizontal query views.

use nalgebra::Vector3;
use rand::Rng;

use super::scene::Scene;
use super::SynthError;
use crate::geom::Pose;

/// Clearance between any camera center and walls or furniture footprints.
pub const CAMERA_CLEARANCE: f64 = 0.8;

/// Free floor distance required ahead of a query camera.
pub const QUERY_VIEW_DEPTH: f64 = 2.5;

/// Candidates drawn per accepted sweep center (best-candidate sampling).
const CANDIDATES: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct CutoutSampling {
    pub yaw_step_deg: f64,
    pub pitch_levels_deg: Vec<f64>,
}

impl Default for CutoutSampling {
    fn default() -> Self {
        Self {
            yaw_step_deg: 30.0,
            pitch_levels_deg: vec![-30.0, 0.0, 30.0],
        }
    }
}

impl CutoutSampling {
    pub fn yaw_count(&self) -> usize {
        (360.0 / self.yaw_step_deg).round() as usize
    }

    pub fn per_sweep(&self) -> usize {
        self.yaw_count() * self.pitch_levels_deg.len()
    }

    /// `(yaw, pitch)` in degrees, pitch-major.
    pub fn orientations(&self) -> Vec<(f64, f64)> {
        self.pitch_levels_deg
            .iter()
            .flat_map(|&p| (0..self.yaw_count()).map(move |k| (k as f64 * self.yaw_step_deg, p)))
            .collect()
    }
}

/// World y is up; yaw 0 looks along +z, positive pitch looks up.
pub fn view_pose(center: &Vector3<f64>, yaw_deg: f64, pitch_deg: f64) -> Pose {
    let (yaw, pitch) = (yaw_deg.to_radians(), pitch_deg.to_radians());
    let forward = Vector3::new(pitch.cos() * yaw.sin(), pitch.sin(), pitch.cos() * yaw.cos());
    Pose::looking(center, &forward, &Vector3::y()).expect("pitch below 90 degrees")
}

fn random_free_point(scene: &Scene, rng: &mut impl Rng, clearance: f64) -> Option<[f64; 2]> {
    let [w, _, d] = scene.spec.room;
    for _ in 0..super::scene::PLACEMENT_ATTEMPTS {
        let (x, z) = (rng.random_range(0.0..w), rng.random_range(0.0..d));
        if scene.is_free(x, z, clearance) {
            return Some([x, z]);
        }
    }
    None
}

/// Best-candidate Poisson-disk sampling: each new center is the candidate
/// farthest from those already chosen, provided it is `min_spacing` away.
pub fn sample_sweep_centers(
    scene: &Scene,
    n: usize,
    min_spacing: f64,
    height: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Vector3<f64>>, SynthError> {
    let mut centers: Vec<[f64; 2]> = Vec::with_capacity(n);
    let fail = |placed| SynthError::InsufficientFreeSpace { placed, requested: n };
    for _ in 0..n {
        let mut chosen = None;
        for _ in 0..super::scene::PLACEMENT_ATTEMPTS / CANDIDATES {
            let mut best: Option<([f64; 2], f64)> = None;
            for _ in 0..CANDIDATES {
                let Some(p) = random_free_point(scene, rng, CAMERA_CLEARANCE) else {
                    return Err(fail(centers.len()));
                };
                let gap = centers
                    .iter()
                    .map(|c| ((c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min);
                if gap >= min_spacing && best.is_none_or(|(_, g)| gap > g) {
                    best = Some((p, gap));
                }
            }
            if let Some((p, _)) = best {
                chosen = Some(p);
                break;
            }
        }
        centers.push(chosen.ok_or_else(|| fail(centers.len()))?);
    }
    Ok(centers.iter().map(|c| Vector3::new(c[0], height, c[1])).collect())
}

/// Database cutout ids and poses, `db<sweep>_<cutout>`.
pub fn sample_sweep_poses(
    scene: &Scene,
    n_sweeps: usize,
    min_spacing: f64,
    height: f64,
    sampling: &CutoutSampling,
    rng: &mut impl Rng,
) -> Result<Vec<(String, Pose)>, SynthError> {
    let centers = sample_sweep_centers(scene, n_sweeps, min_spacing, height, rng)?;
    let views = sampling.orientations();
    Ok(centers
        .iter()
        .enumerate()
        .flat_map(|(s, c)| {
            views
                .iter()
                .enumerate()
                .map(move |(k, &(yaw, pitch))| (format!("db{s:02}_{k:02}"), view_pose(c, yaw, pitch)))
        })
        .collect())
}

/// Whether rays along `yaw_deg` and 20 degrees to either side stay clear of
/// walls and furniture for `depth` units.
fn open_view(scene: &Scene, x: f64, z: f64, yaw_deg: f64, depth: f64) -> bool {
    [-20.0, 0.0, 20.0].iter().all(|off: &f64| {
        let a = (yaw_deg + off).to_radians();
        let steps = (depth / 0.1).ceil() as usize;
        (1..=steps).all(|k| {
            let t = k as f64 * 0.1;
            scene.is_free(x + t * a.sin(), z + t * a.cos(), 0.0)
        })
    })
}

/// Horizontal query views at random free positions and headings, each with
/// at least [`QUERY_VIEW_DEPTH`] of open floor ahead.
pub fn sample_query_poses(scene: &Scene, n: usize, height: f64, rng: &mut impl Rng) -> Result<Vec<(String, Pose)>, SynthError> {
    (0..n)
        .map(|q| {
            for _ in 0..super::scene::PLACEMENT_ATTEMPTS {
                let p = random_free_point(scene, rng, CAMERA_CLEARANCE + 0.2)
                    .ok_or(SynthError::InsufficientFreeSpace { placed: q, requested: n })?;
                let yaw = rng.random_range(0.0..360.0);
                if open_view(scene, p[0], p[1], yaw, QUERY_VIEW_DEPTH) {
                    return Ok((format!("q{q:03}"), view_pose(&Vector3::new(p[0], height, p[1]), yaw, 0.0)));
                }
            }
            Err(SynthError::InsufficientFreeSpace { placed: q, requested: n })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::scene::{generate_scene, SceneSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ten_sweeps_give_360_cutouts() {
        let scene = generate_scene(&SceneSpec::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let poses = sample_sweep_poses(&scene, 10, 1.5, 1.5, &CutoutSampling::default(), &mut rng).unwrap();
        assert_eq!(poses.len(), 360);
    }

    #[test]
    fn centers_respect_spacing() {
        let scene = generate_scene(&SceneSpec::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = sample_sweep_centers(&scene, 12, 1.5, 1.5, &mut rng).unwrap();
        for i in 0..c.len() {
            for j in 0..i {
                assert!((c[i] - c[j]).norm() >= 1.5);
            }
            assert!(scene.is_free(c[i].x, c[i].z, CAMERA_CLEARANCE));
        }
    }

    #[test]
    fn spacing_larger_than_room_fails() {
        let scene = generate_scene(&SceneSpec::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = sample_sweep_centers(&scene, 2, 50.0, 1.5, &mut rng);
        assert!(matches!(r, Err(SynthError::InsufficientFreeSpace { placed: 1, .. })));
    }

    #[test]
    fn view_pose_orientation() {
        let c = Vector3::new(1.0, 1.5, 2.0);
        let p = view_pose(&c, 90.0, 0.0);
        assert!((p.forward() - Vector3::x()).norm() < 1e-12);
        assert!((p.center() - c).norm() < 1e-12);
        let up = view_pose(&c, 0.0, 30.0).forward();
        assert!((up.y - 0.5).abs() < 1e-12);
        // Image rows grow downward in the world.
        let below = p.project(&crate::geom::CameraIntrinsics::paper_default(), &(c + Vector3::new(3.0, -0.5, 0.0)));
        assert!(below.unwrap().y > 378.0);
    }
}
