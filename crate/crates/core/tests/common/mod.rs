//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use dynloc::geom::{CameraIntrinsics, Pose};
use dynloc::raster::RgbImage;
use dynloc::synthgen::{generate_dataset, render_scene, view_pose, DatasetConfig, MovableSpec, Scene, SceneSpec};
use nalgebra::Vector3;
use proptest::prelude::*;

pub fn small_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::paper_default().downscaled(8.0)
}

/// Axis-angle rotations of up to π and translations within ±5 per axis.
pub fn any_pose() -> impl Strategy<Value = Pose> {
    (
        prop::array::uniform3(-1.0f64..1.0),
        0.0f64..std::f64::consts::PI,
        prop::array::uniform3(-5.0f64..5.0),
    )
        .prop_filter("axis must not vanish", |(a, _, _)| Vector3::from(*a).norm() > 1e-3)
        .prop_map(|(a, angle, t)| Pose::from_axis_angle(&Vector3::from(a).normalize(), angle, Vector3::from(t)))
}

pub fn scene(seed: u64) -> Scene {
    dynloc::synthgen::generate_scene(&SceneSpec {
        seed,
        ..Default::default()
    })
    .expect("default room is valid")
}

/// A textured view of a generated room.
pub fn room_view(scene: &Scene, yaw_deg: f64, intr: &CameraIntrinsics) -> RgbImage {
    let [w, _, d] = scene.spec.room;
    let pose = view_pose(&Vector3::new(w / 2.0, 1.5, d / 2.0), yaw_deg, 0.0);
    render_scene(scene, &[], &pose, intr).rgb
}

/// Writes a small dataset and returns its root.
pub fn write_dataset(root: &Path, seed: u64, dynamic: bool, scale: f64, sweeps: usize, queries: usize) -> PathBuf {
    let mut cfg = DatasetConfig::default();
    cfg.scene.seed = seed;
    cfg.intrinsics = cfg.intrinsics.downscaled(scale);
    cfg.sweeps = sweeps;
    cfg.queries = queries;
    cfg.dynamic = dynamic;
    if dynamic {
        cfg.scene.movable = vec![MovableSpec::person(); 3];
    }
    generate_dataset(&cfg, root).expect("dataset generation");
    root.to_path_buf()
}

/// Copies a directory tree.
pub fn copy_tree(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_tree(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), target).unwrap();
        }
    }
}

/// Relative path and bytes of every file under `root`, sorted.
pub fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, rel: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        let mut entries: Vec<_> = std::fs::read_dir(root.join(rel)).unwrap().map(|e| e.unwrap()).collect();
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let r = rel.join(e.file_name());
            if e.file_type().unwrap().is_dir() {
                walk(root, &r, out);
            } else {
                out.push((r, std::fs::read(e.path()).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, Path::new(""), &mut out);
    out
}
