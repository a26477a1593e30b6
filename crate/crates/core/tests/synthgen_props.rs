use dynloc::geom::CameraIntrinsics;
use dynloc::mesh::TriMesh;
use dynloc::render::rasterize;
use dynloc::synthgen::{plan_dataset, render_scene, DatasetConfig, MovableSpec, SceneSpec, Shape};
use proptest::prelude::*;

fn config(seed: u64, movers: usize) -> DatasetConfig {
    DatasetConfig {
        sweeps: 2,
        queries: 3,
        intrinsics: CameraIntrinsics::paper_default().downscaled(8.0),
        dynamic: true,
        scene: SceneSpec {
            seed,
            movable: vec![MovableSpec::person(); movers],
            ..Default::default()
        },
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn placed_objects_stand_in_free_space(seed in 0u64..1000, movers in 0usize..4) {
        let plan = plan_dataset(&config(seed, movers)).unwrap();
        let room = plan.scene.room_bounds();
        let mut groups = vec![plan.scene.movable.clone()];
        groups.extend(plan.queries.iter().map(|q| q.instances.clone()));
        for group in &groups {
            for (k, inst) in group.iter().enumerate() {
                let b = inst.shape.bounds();
                prop_assert!((0..3).all(|a| b.min[a] >= room.min[a] && b.max[a] <= room.max[a]), "{:?}", b);
                for f in &plan.scene.furniture {
                    prop_assert!(inst.shape.footprint_gap(&Shape::Box(*f)) >= 0.0);
                }
                for other in &group[k + 1..] {
                    prop_assert!(inst.shape.footprint_gap(&other.shape) >= 0.0);
                }
            }
        }
    }

    #[test]
    fn masks_and_renders_agree_with_independent_passes(seed in 0u64..1000) {
        let cfg = config(seed, 2);
        let plan = plan_dataset(&cfg).unwrap();
        prop_assert_eq!(&plan, &plan_dataset(&cfg).unwrap());
        for q in &plan.queries {
            let img = render_scene(&plan.scene, &q.instances, &q.pose, &cfg.intrinsics);
            // Second pass: environment and objects rasterized separately.
            let env = rasterize(&plan.scene.environment, &q.pose, &cfg.intrinsics);
            let mut objects = TriMesh::new();
            for inst in &q.instances {
                objects.append(&inst.mesh);
            }
            let obj = rasterize(&objects, &q.pose, &cfg.intrinsics);
            for i in 0..img.labels.len() {
                let on_object = obj.covered(i) && (!env.covered(i) || obj.depth[i] < env.depth[i]);
                prop_assert_eq!(img.labels.data()[i] != 0, on_object, "pixel {}", i);
            }
            // Off both masks, the database and query renders are identical.
            let db = render_scene(&plan.scene, &plan.scene.movable, &q.pose, &cfg.intrinsics);
            for i in 0..img.labels.len() {
                if img.labels.data()[i] == 0 && db.labels.data()[i] == 0 {
                    prop_assert_eq!(img.rgb.data()[i], db.rgb.data()[i]);
                    prop_assert_eq!(img.depth.data()[i], db.depth.data()[i]);
                }
            }
        }
    }
}
