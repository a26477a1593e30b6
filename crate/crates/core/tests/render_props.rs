mod common;

use common::small_intrinsics;
use dynloc::geom::Pose;
use dynloc::mesh::TriMesh;
use dynloc::raster::{BinaryMask, Raster};
use dynloc::render::{compare_views, rasterize, render_view, PhotometricScore, SyntheticView};
use nalgebra::Vector3;
use proptest::prelude::*;

const PATCH: usize = 16;
const STRIDE: usize = 4;

/// A 6×6 wall at z = 4 made of `n`×`n` cells with pseudo-random colors.
fn wall(n: usize, seed: u64) -> TriMesh {
    let mut m = TriMesh::new();
    let mut state = seed | 1;
    for j in 0..=n {
        for i in 0..=n {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            let b = state.to_le_bytes();
            let p = Vector3::new(i as f64 * 6.0 / n as f64 - 3.0, j as f64 * 6.0 / n as f64 - 3.0, 4.0);
            m.push_vertex(&p, [b[0], b[1], b[2]]);
        }
    }
    for j in 0..n {
        for i in 0..n {
            let a = (j * (n + 1) + i) as u32;
            let (b, c, d) = (a + 1, a + n as u32 + 2, a + n as u32 + 1);
            m.faces.push([a, b, c]);
            m.faces.push([a, c, d]);
        }
    }
    m
}

fn camera() -> impl Strategy<Value = Pose> {
    (prop::array::uniform3(-1.5f64..1.5), -0.3f64..0.3, -0.3f64..0.3).prop_map(|(c, yaw, pitch)| {
        let fwd = Vector3::new(yaw.sin(), pitch.sin(), yaw.cos());
        Pose::looking(&Vector3::from(c), &fwd, &Vector3::new(0.0, -1.0, 0.0)).unwrap()
    })
}

fn rect_mask(w: usize, h: usize, r: (usize, usize, usize, usize)) -> BinaryMask {
    Raster::from_fn(w, h, |x, y| x >= r.0 && x < r.0 + r.2 && y >= r.1 && y < r.1 + r.3)
}

fn compared_cells(s: &PhotometricScore, view: &SyntheticView) -> usize {
    let cols = (view.rgb.width() - PATCH) / STRIDE + 1;
    let rows = (view.rgb.height() - PATCH) / STRIDE + 1;
    (s.compared_fraction * (cols * rows) as f64).round() as usize
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rendering_is_deterministic(seed in any::<u64>(), pose in camera()) {
        let m = wall(24, seed);
        let intr = small_intrinsics();
        let a = rasterize(&m, &pose, &intr);
        let b = rasterize(&m.clone(), &pose, &intr);
        prop_assert_eq!(&a.depth, &b.depth);
        prop_assert_eq!(&a.face, &b.face);
        let (va, vb) = (render_view(&m, &pose, &intr).unwrap(), render_view(&m, &pose, &intr).unwrap());
        prop_assert_eq!(&va, &vb);
        for i in 0..va.depth.len() {
            prop_assert!(va.coverage.data()[i] || va.depth.data()[i] == 0.0);
        }
    }

    #[test]
    fn a_render_compared_with_itself_scores_zero(seed in any::<u64>(), pose in camera()) {
        let intr = small_intrinsics();
        let view = render_view(&wall(24, seed), &pose, &intr).unwrap();
        prop_assume!(view.coverage.data().iter().all(|&c| c));
        let none = Raster::new(view.rgb.width(), view.rgb.height(), false);
        let s = compare_views(&view.rgb, &view, &none, PATCH, STRIDE, 1.0).unwrap();
        prop_assert_eq!(s.median, 0.0);
        prop_assert_eq!(s.compared_fraction, 1.0);
    }

    #[test]
    fn enlarging_the_mask_never_adds_compared_cells(
        seed in any::<u64>(),
        query_seed in any::<u64>(),
        pose in camera(),
        r in (0usize..168, 0usize..94, 0usize..100, 0usize..60),
        grow in (0usize..40, 0usize..40),
    ) {
        let intr = small_intrinsics();
        let m = wall(24, seed);
        let view = render_view(&m, &pose, &intr).unwrap();
        let query = render_view(&wall(24, query_seed), &pose, &intr).unwrap().rgb;
        let (w, h) = (view.rgb.width(), view.rgb.height());
        let small = rect_mask(w, h, r);
        let large = rect_mask(w, h, (r.0.saturating_sub(grow.0), r.1.saturating_sub(grow.1), r.2 + 2 * grow.0, r.3 + 2 * grow.1));
        let a = compare_views(&query, &view, &small, PATCH, STRIDE, 1.0);
        let b = compare_views(&query, &view, &large, PATCH, STRIDE, 1.0);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                prop_assert!(compared_cells(&b, &view) <= compared_cells(&a, &view));
                prop_assert!(a.compared_fraction <= 1.0 && a.value.is_finite());
            }
            (_, Err(_)) => {}
            (Err(e), Ok(_)) => prop_assert!(false, "smaller mask failed: {}", e),
        }
    }

    /// Equal medians: the view with less coverage scores strictly worse.
    #[test]
    fn coverage_penalty_prefers_fuller_views(
        seed in any::<u64>(),
        pose in camera(),
        cut in 20usize..120,
        lambda in 0.01f64..5.0,
    ) {
        let intr = small_intrinsics();
        let full = render_view(&wall(24, seed), &pose, &intr).unwrap();
        prop_assume!(full.coverage.data().iter().all(|&c| c));
        let none = Raster::new(full.rgb.width(), full.rgb.height(), false);
        let mut partial = full.clone();
        for y in 0..partial.rgb.height() {
            for x in cut..partial.rgb.width() {
                partial.coverage.set(x, y, false);
                partial.depth.set(x, y, 0.0);
            }
        }
        let a = compare_views(&full.rgb, &full, &none, PATCH, STRIDE, lambda).unwrap();
        let b = compare_views(&full.rgb, &partial, &none, PATCH, STRIDE, lambda).unwrap();
        prop_assert_eq!(a.median, b.median);
        prop_assert!(b.compared_fraction < a.compared_fraction);
        prop_assert!(b.value > a.value);
    }
}
