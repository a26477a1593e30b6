mod common;

use std::sync::OnceLock;

use common::{room_view, scene};
use dynloc::features::{detect_and_describe, match_descriptors, Descriptors, FeatureConfig, MatchConfig};
use dynloc::geom::CameraIntrinsics;
use dynloc::raster::{BinaryMask, Raster, RgbImage};
use proptest::prelude::*;

/// Two overlapping views and one unrelated view.
fn images() -> &'static [RgbImage; 3] {
    static IMAGES: OnceLock<[RgbImage; 3]> = OnceLock::new();
    IMAGES.get_or_init(|| {
        let intr = CameraIntrinsics::paper_default().downscaled(4.0);
        let s = scene(5);
        [room_view(&s, 40.0, &intr), room_view(&s, 52.0, &intr), room_view(&s, 220.0, &intr)]
    })
}

fn nearest(d: &Descriptors, q: &[f32]) -> usize {
    (0..d.len())
        .map(|i| (i, d.row(i).iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f32>()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
        .0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn excluded_pixels_never_hold_keypoints(
        rects in prop::collection::vec((0usize..336, 0usize..189, 10usize..150, 10usize..120), 0..4),
        which in 0usize..3,
    ) {
        let img = &images()[which];
        let mask: BinaryMask = Raster::from_fn(img.width(), img.height(), |x, y| {
            rects.iter().any(|&(x0, y0, w, h)| x >= x0 && x < x0 + w && y >= y0 && y < y0 + h)
        });
        let (kps, desc) = detect_and_describe(img, Some(&mask), &FeatureConfig::default()).unwrap();
        prop_assert_eq!(kps.len(), desc.len());
        for k in &kps {
            prop_assert_eq!(mask.value_at(&k.position), Some(&false));
        }
        for i in 0..desc.len() {
            let n: f32 = desc.row(i).iter().map(|v| v * v).sum::<f32>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-6, "descriptor {} has norm {}", i, n);
        }
    }

    #[test]
    fn matches_are_mutual_nearest_neighbours(a in 0usize..3, b in 0usize..3, ratio in 0.6f32..1.0) {
        let cfg = FeatureConfig::default();
        let (_, da) = detect_and_describe(&images()[a], None, &cfg).unwrap();
        let (_, db) = detect_and_describe(&images()[b], None, &cfg).unwrap();
        let matches = match_descriptors(&da, &db, &MatchConfig { ratio }).unwrap();
        let mut seen_a = std::collections::BTreeSet::new();
        let mut seen_b = std::collections::BTreeSet::new();
        for m in &matches {
            prop_assert!(seen_a.insert(m.idx_a) && seen_b.insert(m.idx_b));
            prop_assert_eq!(nearest(&db, da.row(m.idx_a)), m.idx_b);
            prop_assert_eq!(nearest(&da, db.row(m.idx_b)), m.idx_a);
        }
    }
}

#[test]
fn overlapping_views_match() {
    let cfg = FeatureConfig::default();
    let (_, da) = detect_and_describe(&images()[0], None, &cfg).unwrap();
    let (_, db) = detect_and_describe(&images()[1], None, &cfg).unwrap();
    assert!(match_descriptors(&da, &db, &MatchConfig::default()).unwrap().len() >= 20);
}
