mod common;

use common::{any_pose, small_intrinsics};
use dynloc::geom::{
    epipolar_residual, fundamental_from_poses, pose_error, triangulate, CameraIntrinsics, EpipolarConfig, Pose,
    ResidualKind,
};
use nalgebra::{Matrix3, Vector2, Vector3};
use proptest::prelude::*;

fn intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::paper_default()
}

/// A camera at `center` looking at `target`, with a random roll.
fn looking_at(center: Vector3<f64>, target: Vector3<f64>, roll: f64) -> Option<Pose> {
    let fwd = target - center;
    let up = Vector3::new(roll.sin(), roll.cos(), 0.3);
    Pose::looking(&center, &fwd, &up).ok()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn constructed_poses_are_orthonormal(pose in any_pose()) {
        let r: &Matrix3<f64> = pose.rotation();
        prop_assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-9);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        let [w, x, y, z] = pose.quaternion();
        let back = Pose::from_quaternion(w, x, y, z, *pose.translation()).unwrap();
        prop_assert!((back.rotation() - r).abs().max() < 1e-9);
    }

    #[test]
    fn projections_satisfy_the_epipolar_constraint(
        c1 in prop::array::uniform3(-3.0f64..3.0),
        c2 in prop::array::uniform3(-3.0f64..3.0),
        target in prop::array::uniform3(-1.0f64..1.0),
        offset in prop::array::uniform3(-0.8f64..0.8),
        rolls in (-0.5f64..0.5, -0.5f64..0.5),
    ) {
        let (c1, c2) = (Vector3::from(c1) + Vector3::new(0.0, 0.0, -6.0), Vector3::from(c2) + Vector3::new(0.0, 0.0, -6.0));
        prop_assume!((c1 - c2).norm() > 0.1);
        let target = Vector3::from(target);
        let (Some(p1), Some(p2)) = (looking_at(c1, target, rolls.0), looking_at(c2, target, rolls.1)) else {
            return Ok(());
        };
        let x = target + Vector3::from(offset);
        let intr = intrinsics();
        let (Some(u1), Some(u2)) = (p1.project(&intr, &x), p2.project(&intr, &x)) else {
            return Ok(());
        };
        let f = fundamental_from_poses(&p1, &p2, &intr).unwrap();
        let cfg = EpipolarConfig::new(ResidualKind::Algebraic, 1.0).unwrap();
        prop_assert!(epipolar_residual(&u1, &u2, &f, &cfg) < 1e-9);
        let s = f.svd(false, false).singular_values;
        prop_assert!(s.min() < 1e-9);
    }

    #[test]
    fn pose_error_is_symmetric(a in any_pose(), b in any_pose()) {
        let ab = pose_error(&a, &b);
        let ba = pose_error(&b, &a);
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=180.0).contains(&ab.angle_deg));
        prop_assert!(ab.distance >= 0.0);
    }

    #[test]
    fn triangulation_round_trip(
        point in prop::array::uniform3(-1.0f64..1.0),
        centers in prop::collection::vec(prop::array::uniform3(-2.0f64..2.0), 2..5),
    ) {
        let x = Vector3::from(point);
        let intr = small_intrinsics();
        let mut obs = Vec::new();
        for c in centers {
            let c = Vector3::from(c) + Vector3::new(0.0, 0.0, -5.0);
            let Some(pose) = looking_at(c, Vector3::zeros(), 0.0) else { continue };
            if let Some(px) = pose.project(&intr, &x) {
                obs.push((pose, intr, px));
            }
        }
        prop_assume!(obs.len() >= 2);
        let baseline = obs.iter().map(|o| (o.0.center() - obs[0].0.center()).norm()).fold(0.0, f64::max);
        prop_assume!(baseline > 0.2);
        let t = triangulate(&obs).unwrap();
        for (pose, intr, px) in &obs {
            let re: Vector2<f64> = pose.project(intr, &t.point).unwrap();
            prop_assert!((re - px).norm() < 1e-6);
        }
    }
}

#[test]
fn pose_error_matches_constructed_rotations() {
    let axis = Vector3::new(1.0, 2.0, -0.5).normalize();
    for deg in [0.0, 1.0, 17.5, 90.0, 179.0] {
        let a = Pose::from_axis_angle(&axis, 0.3, Vector3::new(1.0, 0.0, 0.0));
        let rel = Pose::from_axis_angle(&axis, f64::to_radians(deg), Vector3::zeros());
        let b = Pose::new(rel.rotation() * a.rotation(), *a.translation()).unwrap();
        assert!((pose_error(&a, &b).angle_deg - deg).abs() < 1e-6, "{deg}");
    }
}
