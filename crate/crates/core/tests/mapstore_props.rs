mod common;

use std::sync::OnceLock;

use common::{scene, small_intrinsics};
use dynloc::geom::CameraIntrinsics;
use dynloc::mapstore::{build_sparse_model, extract_mesh, fuse_tsdf, MapImage, SparseConfig, TsdfVolume};
use dynloc::synthgen::{render_scene, view_pose};
use nalgebra::Vector3;
use proptest::prelude::*;

/// Views from two positions in one room, every 30 degrees of yaw.
fn images(intr: &CameraIntrinsics) -> Vec<MapImage> {
    let s = scene(9);
    let mut out = Vec::new();
    for (k, c) in [Vector3::new(3.5, 1.5, 3.0), Vector3::new(6.0, 1.5, 5.0)].iter().enumerate() {
        for yaw in (0..360).step_by(30) {
            let pose = view_pose(c, yaw as f64, 0.0);
            let r = render_scene(&s, &[], &pose, intr);
            out.push(MapImage::new(format!("s{k}_{yaw:03}"), r.rgb, r.depth, pose, *intr).unwrap());
        }
    }
    out
}

fn small_images() -> &'static [MapImage] {
    static IMAGES: OnceLock<Vec<MapImage>> = OnceLock::new();
    IMAGES.get_or_init(|| images(&small_intrinsics()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn integration_never_lowers_a_weight(order in Just((0..24usize).collect::<Vec<_>>()).prop_shuffle(), take in 1usize..8) {
        let imgs = small_images();
        let mut vol = TsdfVolume::new(0.1, 0.3, Vector3::new(-0.2, -0.2, -0.2), [106, 34, 86], usize::MAX).unwrap();
        let mut before = vol.weights().to_vec();
        for &i in order.iter().take(take) {
            vol.integrate(&imgs[i]);
            let after = vol.weights();
            prop_assert!(before.iter().zip(after).all(|(b, a)| a >= b));
            prop_assert!(vol.sdf_values().iter().all(|d| d.abs() <= vol.truncation as f32 + 1e-6));
            before = after.to_vec();
        }
    }
}

#[test]
fn mesh_vertices_stay_inside_the_volume() {
    let vol = fuse_tsdf(small_images(), 0.1, 0.3).unwrap();
    let mesh = extract_mesh(&vol).unwrap();
    assert!(!mesh.is_empty());
    let (lo, hi) = vol.bounds();
    for v in &mesh.vertices {
        for k in 0..3 {
            let x = f64::from(v[k]);
            assert!(x >= lo[k] - 1e-4 && x <= hi[k] + 1e-4, "{v:?} outside {lo:?}..{hi:?}");
        }
    }
}

#[test]
fn sparse_tracks_are_verified_and_consistent() {
    let intr = CameraIntrinsics::paper_default().downscaled(4.0);
    let imgs = images(&intr);
    let cfg = SparseConfig::default();
    let model = build_sparse_model(&imgs, &cfg).unwrap();
    assert!(model.num_points() > 50, "{} points", model.num_points());
    model.check_invariants().unwrap();
    for v in &model.visibility {
        assert!(v.residual < cfg.epipolar.threshold, "{v:?}");
    }
    let mut per_point: Vec<Vec<usize>> = vec![Vec::new(); model.num_points()];
    for v in &model.visibility {
        per_point[v.point].push(v.image);
    }
    for (p, images) in per_point.iter_mut().enumerate() {
        assert_eq!(images.len(), model.track_length[p]);
        assert!(images.len() >= 2);
        images.sort_unstable();
        assert!(images.windows(2).all(|w| w[0] != w[1]), "point {p} has two keypoints in one image");
    }
}
