mod common;

use common::{any_pose, small_intrinsics};
use dynloc::geom::{pose_error, CameraIntrinsics, Pose};
use dynloc::pose::{estimate_absolute_pose, solve_p3p, Correspondence2D3D, PoseEstimationError, RansacConfig};
use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Points in front of `truth` with `outliers` of them moved to random pixels.
fn correspondences(truth: &Pose, intr: &CameraIntrinsics, n: usize, outliers: usize, seed: u64) -> Vec<Correspondence2D3D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inv = truth.inverse();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let px = Vector2::new(rng.random_range(0.0..intr.width as f64), rng.random_range(0.0..intr.height as f64));
        let depth = rng.random_range(1.0..8.0);
        let cam = intr.backproject(&px) * depth;
        let point = inv.transform(&cam);
        let pixel = if out.len() < outliers {
            Vector2::new(rng.random_range(0.0..intr.width as f64), rng.random_range(0.0..intr.height as f64))
        } else {
            px
        };
        out.push(Correspondence2D3D { pixel, point, source_track: out.len() });
    }
    out
}

fn ransac(seed: u64) -> RansacConfig {
    RansacConfig { seed, ..Default::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn p3p_recovers_the_generating_pose(truth in any_pose(), seed in any::<u64>()) {
        let intr = small_intrinsics();
        let c = correspondences(&truth, &intr, 3, 0, seed);
        let world = [c[0].point, c[1].point, c[2].point];
        let spread = (world[1] - world[0]).cross(&(world[2] - world[0])).norm();
        prop_assume!(spread > 1e-2);
        let sols = solve_p3p(&[c[0], c[1], c[2]], &intr).unwrap();
        prop_assert!(sols.iter().any(|p| {
            let e = pose_error(p, &truth);
            e.angle_deg < 1e-4 && e.distance < 1e-4
        }), "{} solutions, none matches", sols.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn candidates_honour_their_inlier_contract(
        truth in any_pose(),
        n in 8usize..80,
        outlier_pct in 0usize..70,
        seed in any::<u64>(),
    ) {
        let intr = small_intrinsics();
        let corrs = correspondences(&truth, &intr, n, n * outlier_pct / 100, seed);
        let cfg = ransac(seed);
        match estimate_absolute_pose(&corrs, &intr, &cfg) {
            Ok(c) => {
                prop_assert_eq!(c.inlier_count, c.inlier_indices.len());
                for &i in &c.inlier_indices {
                    let p = c.pose.project(&intr, &corrs[i].point).expect("inliers lie in front");
                    prop_assert!((p - corrs[i].pixel).norm() < cfg.threshold);
                }
            }
            Err(e) => prop_assert_eq!(e, PoseEstimationError::NoModelFound),
        }
    }

    #[test]
    fn local_optimization_never_loses_inliers(truth in any_pose(), n in 10usize..60, seed in any::<u64>()) {
        let intr = small_intrinsics();
        // Pixel noise leaves room for the refit to gain inliers.
        let mut corrs = correspondences(&truth, &intr, n, n / 4, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for c in &mut corrs {
            c.pixel += Vector2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        }
        // A single hypothesis, so both runs start from the same minimal sample.
        let plain = RansacConfig { max_iters: 1, lo_rounds: 0, ..ransac(seed) };
        let refined = RansacConfig { lo_rounds: 10, ..plain.clone() };
        if let Ok(a) = estimate_absolute_pose(&corrs, &intr, &plain) {
            let b = estimate_absolute_pose(&corrs, &intr, &refined).unwrap();
            prop_assert!(b.inlier_count >= a.inlier_count);
        }
    }

    #[test]
    fn estimation_is_deterministic_across_thread_counts(truth in any_pose(), seed in any::<u64>()) {
        let intr = small_intrinsics();
        let corrs = correspondences(&truth, &intr, 40, 16, seed);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| estimate_absolute_pose(&corrs, &intr, &ransac(seed)))
        };
        let a = run(1);
        prop_assert_eq!(&a, &run(3));
        prop_assert_eq!(&a, &estimate_absolute_pose(&corrs, &intr, &ransac(seed)));
    }
}

#[test]
fn planted_outliers_are_rejected() {
    let intr = CameraIntrinsics::paper_default();
    let truth = Pose::from_axis_angle(&Vector3::new(0.2, 1.0, 0.1).normalize(), 0.7, Vector3::new(0.3, -0.2, 1.0));
    let corrs = correspondences(&truth, &intr, 100, 50, 7);
    let c = estimate_absolute_pose(&corrs, &intr, &ransac(7)).unwrap();
    assert!(c.inlier_indices.iter().all(|&i| i >= 50));
    let e = pose_error(&c.pose, &truth);
    assert!(e.distance < 0.01 && e.angle_deg < 0.1, "{e:?}");
}
