//! Sparse reconstruction under known poses: epipolar-verified matches,
//! union-find tracks and triangulated points.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use super::{MapError, MapImage};
use crate::features::{
    detect_and_describe, match_descriptors, Descriptors, FeatureConfig, Keypoint, Match, MatchConfig,
};
use crate::geom::{
    epipolar_residual, fundamental_from_poses, triangulate, CameraIntrinsics, EpipolarConfig, GeomError, Pose,
    ResidualKind, BASELINE_EPSILON,
};
use crate::io;
use crate::retrieval::{describe, GlobalDescriptor};

pub const NO_POINT: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq)]
pub struct SparseConfig {
    pub retrieval_k: usize,
    pub epipolar: EpipolarConfig,
    pub features: FeatureConfig,
    pub matching: MatchConfig,
}

impl Default for SparseConfig {
    fn default() -> Self {
        Self {
            retrieval_k: 10,
            epipolar: EpipolarConfig::default(),
            features: FeatureConfig::default(),
            matching: MatchConfig::default(),
        }
    }
}

impl SparseConfig {
    /// Maximum reprojection error of a retained point, in pixels.
    pub fn reprojection_cutoff(&self) -> f64 {
        match self.epipolar.residual_kind {
            ResidualKind::Sampson => 2.0 * self.epipolar.threshold,
            // Algebraic thresholds carry no pixel unit; fall back to the
            // default Sampson threshold.
            ResidualKind::Algebraic => 2.0 * EpipolarConfig::default().threshold,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageFeatures {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Descriptors,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Visibility {
    pub image: usize,
    pub keypoint: usize,
    pub point: usize,
    /// Largest epipolar residual among the verified matches through this keypoint.
    pub residual: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseModel {
    pub image_ids: Vec<String>,
    pub keypoints: Vec<Vec<Keypoint>>,
    pub descriptors: Vec<Descriptors>,
    pub points3d: Vec<Vector3<f64>>,
    pub point_errors: Vec<f64>,
    pub track_length: Vec<usize>,
    pub visibility: Vec<Visibility>,
    /// Per image, per keypoint: point index or `NO_POINT`.
    kp_point: Vec<Vec<u32>>,
}

impl SparseModel {
    pub fn image_index(&self, id: &str) -> Option<usize> {
        self.image_ids.iter().position(|i| i == id)
    }

    pub fn point_of(&self, image: usize, keypoint: usize) -> Option<usize> {
        let p = *self.kp_point.get(image)?.get(keypoint)?;
        (p != NO_POINT).then_some(p as usize)
    }

    pub fn num_points(&self) -> usize {
        self.points3d.len()
    }

    fn rebuild_index(&mut self) {
        self.kp_point = self.keypoints.iter().map(|k| vec![NO_POINT; k.len()]).collect();
        for v in &self.visibility {
            self.kp_point[v.image][v.keypoint] = v.point as u32;
        }
    }

    /// Structural invariants: valid references, track lengths equal to
    /// visibility counts, length ≥ 2, one keypoint per image per track.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut counts = vec![0usize; self.points3d.len()];
        let mut seen: BTreeMap<(usize, usize), ()> = BTreeMap::new();
        for v in &self.visibility {
            if v.image >= self.keypoints.len() || v.keypoint >= self.keypoints[v.image].len() {
                return Err(format!("dangling keypoint reference {v:?}"));
            }
            if v.point >= self.points3d.len() {
                return Err(format!("dangling point reference {v:?}"));
            }
            if seen.insert((v.point, v.image), ()).is_some() {
                return Err(format!("point {} has two keypoints in image {}", v.point, v.image));
            }
            counts[v.point] += 1;
        }
        for (p, (&c, &t)) in counts.iter().zip(&self.track_length).enumerate() {
            if c != t || c < 2 {
                return Err(format!("point {p}: track_length {t}, visibility {c}"));
            }
        }
        Ok(())
    }

    /// Writes `images.txt`, `points.txt`, `visibility.txt`, `tracks.txt`,
    /// and per-image `keypoints/<id>.kpts` and `descriptors/<id>.desc`.
    pub fn save(&self, dir: &Path) -> Result<(), MapError> {
        io::create_dir(dir)?;
        let mut images = String::new();
        for (i, id) in self.image_ids.iter().enumerate() {
            writeln!(images, "{i} {id} {}", self.keypoints[i].len()).unwrap();
            io::write_keypoints(&dir.join("keypoints").join(format!("{id}.kpts")), &self.keypoints[i])?;
            let d = &self.descriptors[i];
            io::write_descriptors(&dir.join("descriptors").join(format!("{id}.desc")), d.dim, &d.data)?;
        }
        io::write_text(&dir.join("images.txt"), &images)?;
        let mut points = String::new();
        for (i, p) in self.points3d.iter().enumerate() {
            writeln!(
                points,
                "{i} {} {} {} {} {}",
                p.x, p.y, p.z, self.track_length[i], self.point_errors[i]
            )
            .unwrap();
        }
        io::write_text(&dir.join("points.txt"), &points)?;
        let mut vis = String::new();
        let mut tracks: Vec<Vec<(usize, usize)>> = vec![Vec::new(); self.points3d.len()];
        for v in &self.visibility {
            writeln!(vis, "{} {} {} {}", self.image_ids[v.image], v.keypoint, v.point, v.residual).unwrap();
            tracks[v.point].push((v.image, v.keypoint));
        }
        io::write_text(&dir.join("visibility.txt"), &vis)?;
        let mut tr = String::new();
        for (p, obs) in tracks.iter().enumerate() {
            write!(tr, "{p}").unwrap();
            for (img, kp) in obs {
                write!(tr, " {}:{kp}", self.image_ids[*img]).unwrap();
            }
            tr.push('\n');
        }
        io::write_text(&dir.join("tracks.txt"), &tr)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, MapError> {
        let bad = |file: &str, line: usize, msg: &str| {
            MapError::Io(io::IoError::Parse {
                path: dir.join(file),
                line,
                msg: msg.to_string(),
            })
        };
        let mut model = SparseModel::default();
        let text = io::read_text(&dir.join("images.txt"))?;
        for (ln, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 3 || toks[0].parse::<usize>().ok() != Some(model.image_ids.len()) {
                return Err(bad("images.txt", ln + 1, "expected `index id num_keypoints`"));
            }
            let id = toks[1].to_string();
            let kps = io::read_keypoints(&dir.join("keypoints").join(format!("{id}.kpts")))?;
            let (dim, data) = io::read_descriptors(&dir.join("descriptors").join(format!("{id}.desc")))?;
            let desc = Descriptors { dim, data };
            if desc.len() != kps.len() && !(kps.is_empty() && desc.data.is_empty()) {
                return Err(bad("images.txt", ln + 1, "descriptor count differs from keypoint count"));
            }
            model.image_ids.push(id);
            model.keypoints.push(kps);
            model.descriptors.push(desc);
        }
        let text = io::read_text(&dir.join("points.txt"))?;
        for (ln, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let toks: Vec<&str> = line.split_whitespace().collect();
            let nums: Option<Vec<f64>> = toks.iter().map(|t| t.parse::<f64>().ok()).collect();
            match nums {
                Some(v) if v.len() == 6 && v[0] as usize == model.points3d.len() => {
                    model.points3d.push(Vector3::new(v[1], v[2], v[3]));
                    model.track_length.push(v[4] as usize);
                    model.point_errors.push(v[5]);
                }
                _ => return Err(bad("points.txt", ln + 1, "expected `idx x y z track_len err`")),
            }
        }
        let ids: BTreeMap<&str, usize> = model.image_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let text = io::read_text(&dir.join("visibility.txt"))?;
        let mut vis = Vec::new();
        for (ln, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let toks: Vec<&str> = line.split_whitespace().collect();
            let parsed = (|| {
                if toks.len() != 4 {
                    return None;
                }
                Some(Visibility {
                    image: *ids.get(toks[0])?,
                    keypoint: toks[1].parse().ok()?,
                    point: toks[2].parse().ok()?,
                    residual: toks[3].parse().ok()?,
                })
            })();
            vis.push(parsed.ok_or_else(|| bad("visibility.txt", ln + 1, "expected `image_id kp point residual`"))?);
        }
        model.visibility = vis;
        model
            .check_invariants()
            .map_err(|m| bad("visibility.txt", 0, &m))?;
        model.rebuild_index();
        Ok(model)
    }
}

/// Unordered image pairs `(i, j)`, `i < j`, formed from each image's `k`
/// most similar images among those with a non-degenerate baseline.
pub fn retrieval_pairs(poses: &[Pose], globals: &[GlobalDescriptor], k: usize) -> Vec<(usize, usize)> {
    let n = poses.len();
    let centers: Vec<Vector3<f64>> = poses.iter().map(|p| p.center()).collect();
    let mut pairs = std::collections::BTreeSet::new();
    for i in 0..n {
        let mut cands: Vec<(f32, usize)> = (0..n)
            .filter(|&j| j != i && (centers[j] - centers[i]).norm() > BASELINE_EPSILON)
            .map(|j| (globals[i].dot(&globals[j]), j))
            .collect();
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, j) in cands.iter().take(k) {
            pairs.insert((i.min(j), i.max(j)));
        }
    }
    pairs.into_iter().collect()
}

/// Detects features and global descriptors, then builds the model.
pub fn build_sparse_model(images: &[MapImage], cfg: &SparseConfig) -> Result<SparseModel, MapError> {
    let features: Vec<ImageFeatures> = images
        .par_iter()
        .map(|img| {
            let (keypoints, descriptors) =
                detect_and_describe(&img.rgb, None, &cfg.features).expect("no exclusion mask");
            ImageFeatures { keypoints, descriptors }
        })
        .collect();
    let globals: Vec<GlobalDescriptor> = images.par_iter().map(|img| describe(&img.rgb)).collect();
    build_sparse_model_from_features(images, features, &globals, &BTreeMap::new(), cfg)
}

struct Verified {
    i: usize,
    a: usize,
    j: usize,
    b: usize,
    residual: f64,
}

/// Union-find whose sets remember which images they contain.
struct TrackForest {
    parent: Vec<usize>,
    images: Vec<Vec<usize>>,
    size: Vec<usize>,
}

impl TrackForest {
    fn new(node_image: &[usize]) -> Self {
        Self {
            parent: (0..node_image.len()).collect(),
            images: node_image.iter().map(|&i| vec![i]).collect(),
            size: vec![1; node_image.len()],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Merges unless the union would hold two keypoints of one image.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return true;
        }
        let (ia, ib) = (&self.images[ra], &self.images[rb]);
        let (mut p, mut q) = (0, 0);
        while p < ia.len() && q < ib.len() {
            match ia[p].cmp(&ib[q]) {
                std::cmp::Ordering::Equal => return false,
                std::cmp::Ordering::Less => p += 1,
                std::cmp::Ordering::Greater => q += 1,
            }
        }
        let (big, small) = if self.size[ra] >= self.size[rb] { (ra, rb) } else { (rb, ra) };
        let moved = std::mem::take(&mut self.images[small]);
        let mut merged = Vec::with_capacity(self.images[big].len() + moved.len());
        let (x, y) = (&self.images[big], &moved);
        let (mut p, mut q) = (0, 0);
        while p < x.len() || q < y.len() {
            if q == y.len() || (p < x.len() && x[p] < y[q]) {
                merged.push(x[p]);
                p += 1;
            } else {
                merged.push(y[q]);
                q += 1;
            }
        }
        self.images[big] = merged;
        self.parent[small] = big;
        self.size[big] += self.size[small];
        true
    }
}

/// Builds the model from precomputed features. Pairs present in `ingested`
/// (keyed `(i, j)` with `i < j`, `idx_a` indexing image `i`) use those
/// matches instead of descriptor matching; all matches are epipolar-verified.
pub fn build_sparse_model_from_features(
    images: &[MapImage],
    features: Vec<ImageFeatures>,
    globals: &[GlobalDescriptor],
    ingested: &BTreeMap<(usize, usize), Vec<Match>>,
    cfg: &SparseConfig,
) -> Result<SparseModel, MapError> {
    let n = images.len();
    if features.len() != n || globals.len() != n {
        return Err(MapError::InvalidParameters("feature/image count mismatch".into()));
    }
    let poses: Vec<Pose> = images.iter().map(|i| i.pose).collect();
    let intr: CameraIntrinsics = match images.first() {
        Some(i) => i.intrinsics,
        None => return Ok(SparseModel::default()),
    };
    let pairs = retrieval_pairs(&poses, globals, cfg.retrieval_k);
    let verified: Vec<Vec<Verified>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let f = match fundamental_from_poses(&poses[i], &poses[j], &intr) {
                Ok(f) => f,
                Err(_) => return Vec::new(),
            };
            let mut matches = match ingested.get(&(i, j)) {
                Some(m) => m.clone(),
                None => match_descriptors(&features[i].descriptors, &features[j].descriptors, &cfg.matching)
                    .unwrap_or_default(),
            };
            matches.sort_by(|x, y| y.score.total_cmp(&x.score).then(x.idx_a.cmp(&y.idx_a)));
            let (ki, kj) = (&features[i].keypoints, &features[j].keypoints);
            matches
                .iter()
                .filter(|m| m.idx_a < ki.len() && m.idx_b < kj.len())
                .filter_map(|m| {
                    let r = epipolar_residual(&ki[m.idx_a].position, &kj[m.idx_b].position, &f, &cfg.epipolar);
                    cfg.epipolar.is_inlier(r).then_some(Verified {
                        i,
                        a: m.idx_a,
                        j,
                        b: m.idx_b,
                        residual: r,
                    })
                })
                .collect()
        })
        .collect();

    // Nodes are (image, keypoint) flattened.
    let offsets: Vec<usize> = features
        .iter()
        .scan(0, |acc, f| {
            let o = *acc;
            *acc += f.keypoints.len();
            Some(o)
        })
        .collect();
    let total: usize = features.iter().map(|f| f.keypoints.len()).sum();
    let mut node_image = Vec::with_capacity(total);
    for (i, f) in features.iter().enumerate() {
        node_image.extend(std::iter::repeat_n(i, f.keypoints.len()));
    }
    let mut forest = TrackForest::new(&node_image);
    let mut node_residual = vec![f64::NAN; total];
    for v in verified.iter().flatten() {
        let (na, nb) = (offsets[v.i] + v.a, offsets[v.j] + v.b);
        if forest.union(na, nb) {
            for nd in [na, nb] {
                let r = &mut node_residual[nd];
                *r = if r.is_nan() { v.residual } else { r.max(v.residual) };
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for nd in 0..total {
        if node_residual[nd].is_nan() {
            continue;
        }
        let root = forest.find(nd);
        groups.entry(root).or_default().push(nd);
    }
    let mut tracks: Vec<Vec<usize>> = groups.into_values().filter(|g| g.len() >= 2).collect();
    tracks.sort_by_key(|t| t[0]);

    let node_of = |nd: usize| {
        let i = node_image[nd];
        (i, nd - offsets[i])
    };
    let cutoff = cfg.reprojection_cutoff();
    let triangulated: Vec<Option<(Vector3<f64>, f64, Vec<usize>)>> = tracks
        .par_iter()
        .map(|track| {
            let mut nodes = track.clone();
            loop {
                if nodes.len() < 2 {
                    return None;
                }
                let obs: Vec<(Pose, CameraIntrinsics, Vector2<f64>)> = nodes
                    .iter()
                    .map(|&nd| {
                        let (i, k) = node_of(nd);
                        (poses[i], intr, features[i].keypoints[k].position)
                    })
                    .collect();
                match triangulate(&obs) {
                    Ok(t) if t.reprojection_error <= cutoff => return Some((t.point, t.reprojection_error, nodes)),
                    Ok(t) => {
                        let worst = obs
                            .iter()
                            .enumerate()
                            .map(|(k, (p, c, u))| {
                                let e = p.project(c, &t.point).map(|q| (q - u).norm()).unwrap_or(f64::INFINITY);
                                (k, e)
                            })
                            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
                        nodes.remove(worst.0);
                    }
                    Err(GeomError::CheiralityViolation(k)) => {
                        nodes.remove(k);
                    }
                    Err(_) => return None,
                }
            }
        })
        .collect();

    let mut model = SparseModel {
        image_ids: images.iter().map(|i| i.id.clone()).collect(),
        ..Default::default()
    };
    for (point, err, nodes) in triangulated.into_iter().flatten() {
        let idx = model.points3d.len();
        model.points3d.push(point);
        model.point_errors.push(err);
        model.track_length.push(nodes.len());
        for nd in nodes {
            let (i, k) = node_of(nd);
            model.visibility.push(Visibility {
                image: i,
                keypoint: k,
                point: idx,
                residual: node_residual[nd],
            });
        }
    }
    for f in features {
        model.keypoints.push(f.keypoints);
        model.descriptors.push(f.descriptors);
    }
    model.rebuild_index();
    Ok(model)
}
