mod common;

use std::collections::BTreeMap;

use common::any_pose;
use dynloc::evalx::{accuracy_curve, compare_variants, QueryResult};
use dynloc::geom::Pose;
use nalgebra::Vector3;
use proptest::prelude::*;

/// Independent recount: camera centers from `-Rᵀt`, angle from the trace.
fn brute_force(results: &[QueryResult], gt: &BTreeMap<String, Pose>, thresholds: &[f64], gate: f64) -> Vec<f64> {
    if results.is_empty() {
        return vec![0.0; thresholds.len()];
    }
    thresholds
        .iter()
        .map(|&t| {
            let hits = results
                .iter()
                .filter(|(id, p)| {
                    let Some(p) = p else { return false };
                    let g = &gt[id];
                    let ca = -(p.rotation().transpose() * p.translation());
                    let cb = -(g.rotation().transpose() * g.translation());
                    let cos = (((p.rotation() * g.rotation().transpose()).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
                    (ca - cb).norm() < t && cos.acos().to_degrees() < gate
                })
                .count();
            hits as f64 / results.len() as f64
        })
        .collect()
}

/// Ground truth plus a result per query: missing, or the truth perturbed.
fn fixture() -> impl Strategy<Value = (BTreeMap<String, Pose>, Vec<QueryResult>)> {
    prop::collection::vec(
        (any_pose(), prop::option::weighted(0.8, (prop::array::uniform3(-1.5f64..1.5), 0.0f64..0.4))),
        0..30,
    )
    .prop_map(|items| {
        let mut gt = BTreeMap::new();
        let mut results = Vec::new();
        for (k, (truth, perturb)) in items.into_iter().enumerate() {
            let id = format!("q{k:03}");
            let est = perturb.map(|(dc, angle)| {
                let rot = Pose::from_axis_angle(&Vector3::new(0.3, 1.0, -0.2).normalize(), angle, Vector3::zeros());
                let r = rot.rotation() * truth.rotation();
                Pose::from_center(r, &(truth.center() + Vector3::from(dc)))
            });
            gt.insert(id.clone(), truth);
            results.push((id, est));
        }
        (gt, results)
    })
}

fn thresholds() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::btree_set(1u32..400, 1..6).prop_map(|s| s.into_iter().map(|v| f64::from(v) / 100.0).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn curve_equals_brute_force_recount((gt, results) in fixture(), t in thresholds(), gate in 1.0f64..30.0) {
        let curve = accuracy_curve(&results, &gt, &t, gate).unwrap();
        prop_assert_eq!(&curve.fraction_localized, &brute_force(&results, &gt, &t, gate));
        prop_assert_eq!(curve.queries, results.len());
        prop_assert!(curve.fraction_localized.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn deltas_flip_sign_when_variants_swap((gt, a) in fixture(), seed in any::<u64>(), t in thresholds()) {
        // The second run drops a pseudo-random subset of the first run's poses.
        let b: Vec<QueryResult> = a
            .iter()
            .enumerate()
            .map(|(k, (id, p))| (id.clone(), if (seed >> (k % 64)) & 1 == 1 { None } else { *p }))
            .collect();
        let ab = compare_variants(&[("a".into(), a.clone()), ("b".into(), b.clone())], &gt, None, &t, 10.0).unwrap();
        let ba = compare_variants(&[("b".into(), b), ("a".into(), a)], &gt, None, &t, 10.0).unwrap();
        let flipped: Vec<f64> = ba.rows[1].delta.iter().map(|d| -d).collect();
        prop_assert_eq!(&ab.rows[1].delta, &flipped);
        prop_assert!(ab.rows[0].delta.iter().all(|d| *d == 0.0));
    }
}
