//! Rendering the fused mesh at candidate poses and photometric verification.

mod dense;
mod rasterize;

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::geom::CameraIntrinsics;
use crate::io::{self, IoError};
use crate::mesh::TriMesh;
use crate::pose::{sort_candidates, PoseCandidate};
use crate::raster::{BinaryMask, DepthMap, RgbImage};

pub use dense::{compare_fields, compare_views, dense_descriptor_field, median, DenseField, LOW_CONFIDENCE_CELLS};
pub use rasterize::{rasterize, render_view, GBuffer, NEAR_PLANE, NO_FACE};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("mesh has no faces")]
    EmptyMesh,
    #[error("no pixel is both covered by the render and outside the movable mask")]
    NoComparablePixels,
    #[error("image, render and mask sizes differ")]
    SizeMismatch,
    #[error("invalid dense grid: patch {patch}, stride {stride}")]
    InvalidGrid { patch: usize, stride: usize },
    #[error("no pose candidates")]
    NoCandidates,
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticView {
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub coverage: BinaryMask,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhotometricScore {
    /// `median + λ·(1 − compared_fraction)`; lower is more similar.
    pub value: f64,
    pub median: f64,
    pub compared_fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectConfig {
    pub render_l: usize,
    pub patch: usize,
    pub stride: usize,
    pub lambda: f64,
    /// Keep candidate renders in the selection, for debug dumps.
    pub keep_renders: bool,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            render_l: 10,
            patch: 16,
            stride: 4,
            lambda: 1.0,
            keep_renders: false,
        }
    }
}

#[derive(Debug)]
pub struct Selection {
    pub best: PoseCandidate,
    /// Score of `best`; `None` when it was returned without rendering.
    pub score: Option<PhotometricScore>,
    /// Rendered candidates in inlier order, with their scores.
    pub scored: Vec<(PoseCandidate, Result<PhotometricScore, RenderError>)>,
    pub renders: Vec<SyntheticView>,
}

fn rank(a: &(PoseCandidate, Result<PhotometricScore, RenderError>), b: &(PoseCandidate, Result<PhotometricScore, RenderError>)) -> Ordering {
    let by_score = match (&a.1, &b.1) {
        (Ok(x), Ok(y)) => x.value.total_cmp(&y.value),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => Ordering::Equal,
    };
    by_score
        .then(b.0.inlier_count.cmp(&a.0.inlier_count))
        .then_with(|| a.0.source_image.cmp(&b.0.source_image))
}

/// Renders the `render_l` best candidates by inlier count and returns the
/// lowest-scoring one. Candidates whose comparison fails rank last.
pub fn select_best_pose(
    query: &RgbImage,
    candidates: &[PoseCandidate],
    mesh: &TriMesh,
    intr: &CameraIntrinsics,
    movable: &BinaryMask,
    cfg: &SelectConfig,
) -> Result<Selection, RenderError> {
    let sorted = sort_candidates(candidates.to_vec());
    let Some(first) = sorted.first() else {
        return Err(RenderError::NoCandidates);
    };
    if sorted.len() == 1 || cfg.render_l <= 1 {
        return Ok(Selection {
            best: first.clone(),
            score: None,
            scored: Vec::new(),
            renders: Vec::new(),
        });
    }
    if !query.same_size(movable) {
        return Err(RenderError::SizeMismatch);
    }
    let top = &sorted[..cfg.render_l.min(sorted.len())];
    let query_field = dense_descriptor_field(query, cfg.patch, cfg.stride)?;
    let results: Vec<(Result<PhotometricScore, RenderError>, Option<SyntheticView>)> = top
        .par_iter()
        .map(|cand| {
            let view = match render_view(mesh, &cand.pose, intr) {
                Ok(v) => v,
                Err(e) => return (Err(e), None),
            };
            let score = dense_descriptor_field(&view.rgb, cfg.patch, cfg.stride)
                .and_then(|sf| compare_fields(&query_field, &sf, &view, movable, cfg.lambda));
            (score, cfg.keep_renders.then_some(view))
        })
        .collect();
    let mut renders = Vec::new();
    let mut scored = Vec::with_capacity(top.len());
    for (cand, (score, view)) in top.iter().zip(results) {
        scored.push((cand.clone(), score));
        renders.extend(view);
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| rank(&scored[a], &scored[b]));
    let best = order[0];
    match &scored[best].1 {
        Ok(s) => Ok(Selection {
            best: scored[best].0.clone(),
            score: Some(*s),
            scored,
            renders,
        }),
        Err(_) => {
            let (_, err) = scored.swap_remove(best);
            Err(err.unwrap_err())
        }
    }
}

/// Writes `<stem>.render<k>.png` per kept render and `<stem>.scores.txt`
/// with one `candidate_id median coverage final_score` line per candidate.
pub fn write_debug_dump(dir: &Path, stem: &str, selection: &Selection) -> Result<(), RenderError> {
    io::create_dir(dir)?;
    for (k, view) in selection.renders.iter().enumerate() {
        io::write_rgb_png(&dir.join(format!("{stem}.render{k}.png")), &view.rgb)?;
    }
    let mut table = String::new();
    for (cand, score) in &selection.scored {
        match score {
            Ok(s) => writeln!(table, "{} {} {} {}", cand.source_image, s.median, s.compared_fraction, s.value),
            Err(_) => writeln!(table, "{} nan 0 inf", cand.source_image),
        }
        .unwrap();
    }
    io::write_text(&dir.join(format!("{stem}.scores.txt")), &table)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Pose;
    use crate::raster::Raster;
    use nalgebra::Vector3;

    /// A checkered wall at z = 3 in front of the identity camera.
    fn wall() -> TriMesh {
        let mut m = TriMesh::new();
        let n = 24;
        for j in 0..=n {
            for i in 0..=n {
                let (x, y) = (i as f64 * 0.25 - 3.0, j as f64 * 0.25 - 3.0);
                let c = if (i + j) % 2 == 0 { [230, 230, 230] } else { [20, 20, 20] };
                m.push_vertex(&Vector3::new(x, y, 3.0), c);
            }
        }
        for j in 0..n {
            for i in 0..n {
                let a = (j * (n + 1) + i) as u32;
                let b = a + 1;
                let c = a + n as u32 + 2;
                let d = a + n as u32 + 1;
                m.faces.push([a, b, c]);
                m.faces.push([a, c, d]);
            }
        }
        m
    }

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(80.0, 48.0, 32.0, 96, 64).unwrap()
    }

    fn cand(id: &str, inliers: usize, pose: Pose) -> PoseCandidate {
        PoseCandidate {
            pose,
            inlier_count: inliers,
            inlier_indices: Vec::new(),
            source_image: id.into(),
        }
    }

    #[test]
    fn true_pose_beats_shifted_poses() {
        let mesh = wall();
        let i = intr();
        let query = render_view(&mesh, &Pose::identity(), &i).unwrap().rgb;
        let shifted = |dx: f64| Pose::from_center(nalgebra::Matrix3::identity(), &Vector3::new(dx, 0.1, 0.0));
        let cands = vec![
            cand("a", 50, shifted(0.13)),
            cand("b", 40, Pose::identity()),
            cand("c", 30, shifted(-0.4)),
        ];
        let sel = select_best_pose(&query, &cands, &mesh, &i, &Raster::new(96, 64, false), &SelectConfig::default())
            .unwrap();
        assert_eq!(sel.best.source_image, "b");
        assert_eq!(sel.score.unwrap().median, 0.0);
    }

    #[test]
    fn degenerate_l_returns_inlier_argmax() {
        let mesh = wall();
        let i = intr();
        let query = Raster::new(96, 64, [0; 3]);
        let cands = vec![cand("b", 10, Pose::identity()), cand("a", 12, Pose::identity())];
        let cfg = SelectConfig {
            render_l: 1,
            ..Default::default()
        };
        let sel = select_best_pose(&query, &cands, &mesh, &i, &Raster::new(96, 64, false), &cfg).unwrap();
        assert_eq!(sel.best.source_image, "a");
        let single = select_best_pose(&query, &cands[..1], &mesh, &i, &Raster::new(96, 64, false), &Default::default())
            .unwrap();
        assert_eq!(single.best.source_image, "b");
        assert!(single.score.is_none());
    }

    #[test]
    fn failing_candidates_rank_last() {
        let mesh = wall();
        let i = intr();
        let query = render_view(&mesh, &Pose::identity(), &i).unwrap().rgb;
        let away = Pose::from_axis_angle(&Vector3::y(), std::f64::consts::PI, Vector3::zeros());
        let cands = vec![cand("a", 50, away), cand("b", 5, Pose::identity())];
        let sel = select_best_pose(&query, &cands, &mesh, &i, &Raster::new(96, 64, false), &Default::default()).unwrap();
        assert_eq!(sel.best.source_image, "b");
        let all_away = vec![cand("a", 50, away), cand("b", 5, away)];
        let r = select_best_pose(&query, &all_away, &mesh, &i, &Raster::new(96, 64, false), &Default::default());
        assert!(matches!(r, Err(RenderError::NoComparablePixels)));
    }

    #[test]
    fn ties_prefer_more_inliers_then_lower_id() {
        let mesh = wall();
        let i = intr();
        let query = render_view(&mesh, &Pose::identity(), &i).unwrap().rgb;
        let cands = vec![
            cand("c", 7, Pose::identity()),
            cand("b", 9, Pose::identity()),
            cand("a", 9, Pose::identity()),
        ];
        let sel = select_best_pose(&query, &cands, &mesh, &i, &Raster::new(96, 64, false), &Default::default()).unwrap();
        assert_eq!(sel.best.source_image, "a");
    }

    #[test]
    fn rendering_is_deterministic() {
        let mesh = wall();
        let pose = Pose::from_axis_angle(&Vector3::new(0.2, 1.0, 0.1), 0.3, Vector3::new(0.1, -0.2, 0.5));
        let a = render_view(&mesh, &pose, &intr()).unwrap();
        let b = render_view(&mesh, &pose, &intr()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn debug_dump_writes_table() {
        let mesh = wall();
        let i = intr();
        let query = render_view(&mesh, &Pose::identity(), &i).unwrap().rgb;
        let cands = vec![cand("a", 2, Pose::identity()), cand("b", 1, Pose::identity())];
        let cfg = SelectConfig {
            keep_renders: true,
            ..Default::default()
        };
        let sel = select_best_pose(&query, &cands, &mesh, &i, &Raster::new(96, 64, false), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_debug_dump(dir.path(), "q0", &sel).unwrap();
        let text = io::read_text(&dir.path().join("q0.scores.txt")).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(dir.path().join("q0.render1.png").exists());
    }
}
