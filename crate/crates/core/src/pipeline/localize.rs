//! Online localization of query images against a built map.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::{load_map, MapArtifacts, PipelineConfig, PipelineError, Variant};
use crate::dynfilter::{filter_matches, reassign_small_masks, reassign_unknown_masks, unknown_betas, Layer, MaskSet, Observation};
use crate::features::{describe_keypoints, detect_and_describe, match_descriptors, Descriptors, GradientField, Keypoint, Match};
use crate::geom::{CameraIntrinsics, Pose};
use crate::io;
use crate::pose::{estimate_absolute_pose, sort_candidates, Correspondence2D3D, PoseCandidate, PoseEstimationError, RansacConfig};
use crate::raster::{to_gray, BinaryMask, Raster, RgbImage};
use crate::render::{select_best_pose, write_debug_dump};
use crate::retrieval::{describe, find_closest_images, GlobalDescriptor};

/// One query image with its segmentation and any ingested features.
#[derive(Clone, Debug)]
pub struct QueryInput {
    pub id: String,
    pub rgb: RgbImage,
    pub intrinsics: CameraIntrinsics,
    /// Segmentation as ingested, before any reassignment.
    pub masks: MaskSet,
    /// Ingested keypoints, with descriptors when available.
    pub keypoints: Option<(Vec<Keypoint>, Option<Descriptors>)>,
    pub global: Option<GlobalDescriptor>,
    /// Ingested matches per database image id; `idx_a` indexes the query keypoints.
    pub matches: BTreeMap<String, Vec<Match>>,
}

impl QueryInput {
    pub fn new(id: impl Into<String>, rgb: RgbImage, intrinsics: CameraIntrinsics, masks: MaskSet) -> Self {
        Self {
            id: id.into(),
            rgb,
            intrinsics,
            masks,
            keypoints: None,
            global: None,
            matches: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimings {
    pub features_ms: f64,
    pub retrieval_ms: f64,
    pub matching_ms: f64,
    pub selection_ms: f64,
    pub total_ms: f64,
}

/// β values computed for one query / database image pair.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairBetas {
    pub database_id: String,
    pub query: BTreeMap<u16, f64>,
    pub database: BTreeMap<u16, f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationResult {
    pub query_id: String,
    /// The selected candidate's pose; `None` when no candidate was found.
    pub pose: Option<Pose>,
    pub inlier_count: usize,
    /// Photometric score of the selected pose, when it was rendered.
    pub score: Option<f64>,
    pub source_image: Option<String>,
    pub candidates: usize,
    pub timings: StageTimings,
    pub betas: Vec<PairBetas>,
}

impl LocalizationResult {
    fn failed(query_id: &str, total_ms: f64) -> Self {
        Self {
            query_id: query_id.to_string(),
            pose: None,
            inlier_count: 0,
            score: None,
            source_image: None,
            candidates: 0,
            timings: StageTimings {
                total_ms,
                ..StageTimings::default()
            },
            betas: Vec::new(),
        }
    }

    /// `query_id status inlier_count score time_ms`.
    pub fn report_line(&self) -> String {
        let status = if self.pose.is_some() { "ok" } else { "failed" };
        let score = self.score.map_or_else(|| "-".to_string(), |s| format!("{s:.6}"));
        format!(
            "{} {status} {} {score} {:.1}",
            self.query_id, self.inlier_count, self.timings.total_ms
        )
    }
}

/// Per-pair state exposed to instrumentation hooks, after filtering.
#[derive(Debug)]
pub struct PairTrace<'a> {
    pub query_id: &'a str,
    pub database_id: &'a str,
    pub variant: Variant,
    pub query_keypoints: &'a [Keypoint],
    pub database_keypoints: &'a [Keypoint],
    /// Query masks after reassignment for this pair.
    pub query_masks: &'a MaskSet,
    pub database_masks: &'a MaskSet,
    /// Matches before mask filtering.
    pub matches: &'a [Match],
    /// Matches handed to pose estimation.
    pub filtered: &'a [Match],
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// RANSAC seed for one pair, independent of scheduling.
fn pair_seed(seed: u64, query: &str, database: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(query.as_bytes());
    h.update([0]);
    h.update(database.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("digest is 32 bytes"))
}

/// Detected keypoints avoid `exclusion`; ingested keypoints are kept whole so
/// that ingested match indices stay valid, and are excluded at match time.
fn query_features(
    query: &QueryInput,
    exclusion: Option<&BinaryMask>,
    cfg: &PipelineConfig,
) -> Result<(Vec<Keypoint>, Descriptors), PipelineError> {
    let Some((kps, desc)) = &query.keypoints else {
        return Ok(detect_and_describe(&query.rgb, exclusion, &cfg.features)?);
    };
    let desc = match desc {
        Some(d) => d.clone(),
        None => {
            let field = GradientField::new(&to_gray(&query.rgb), cfg.features.smoothing_sigma);
            describe_keypoints(&field, kps, cfg.features.patch)
        }
    };
    if desc.len() != kps.len() {
        return Err(PipelineError::InvalidInput(format!(
            "query {}: {} descriptors for {} keypoints",
            query.id,
            desc.len(),
            kps.len()
        )));
    }
    Ok((kps.clone(), desc))
}

struct PairOutcome {
    candidate: Option<PoseCandidate>,
    betas: Option<PairBetas>,
}

#[allow(clippy::too_many_arguments)]
fn localize_pair(
    query: &QueryInput,
    q_kps: &[Keypoint],
    q_desc: &Descriptors,
    q_masks: &MaskSet,
    q_exclusion: Option<&BinaryMask>,
    database_id: &str,
    map: &MapArtifacts,
    cfg: &PipelineConfig,
    hook: &(dyn Fn(&PairTrace) + Sync),
) -> Result<PairOutcome, PipelineError> {
    let sparse = &map.sparse;
    let ti = sparse
        .image_index(database_id)
        .ok_or_else(|| PipelineError::InvalidInput(format!("retrieved unknown database image {database_id}")))?;
    let t_kps = &sparse.keypoints[ti];
    let t_masks = &map.masks[ti];
    let mut matches = match query.matches.get(database_id) {
        Some(m) => m
            .iter()
            .filter(|m| m.idx_a < q_kps.len() && m.idx_b < t_kps.len())
            .copied()
            .collect(),
        None => match_descriptors(q_desc, &sparse.descriptors[ti], &cfg.matching)?,
    };
    let dynamic = cfg.variant.filters_masks();
    if dynamic {
        matches.retain(|m| {
            let on_query = q_exclusion.is_some_and(|e| e.value_at(&q_kps[m.idx_a].position) == Some(&true));
            !on_query && t_masks.layer_at(&t_kps[m.idx_b].position) != Some(Layer::Dynamic)
        });
    }

    let track_of = |k: usize| sparse.point_of(ti, k).map_or(0, |p| sparse.track_length[p]);
    let (filtered, betas, q_star, t_star) = if dynamic {
        let mut t_matched = vec![false; t_kps.len()];
        let mut q_track = vec![None; q_kps.len()];
        for m in &matches {
            t_matched[m.idx_b] = true;
            q_track[m.idx_a] = Some(track_of(m.idx_b));
        }
        let t_obs: Vec<Observation> = t_kps
            .iter()
            .enumerate()
            .map(|(k, kp)| Observation {
                position: kp.position,
                track_length: track_of(k),
                matched_to_query: t_matched[k],
            })
            .collect();
        let q_obs: Vec<Observation> = q_kps
            .iter()
            .zip(&q_track)
            .map(|(kp, t)| Observation {
                position: kp.position,
                track_length: t.unwrap_or(0),
                matched_to_query: t.is_some(),
            })
            .collect();
        let beta_t = unknown_betas(t_masks, &t_obs, &cfg.criterion);
        let beta_q = unknown_betas(q_masks, &q_obs, &cfg.criterion);
        let t_star = reassign_unknown_masks(t_masks, &beta_t, cfg.criterion.delta);
        let q_star = reassign_unknown_masks(q_masks, &beta_q, cfg.criterion.delta);
        let filtered = filter_matches(&matches, &q_star, &t_star, q_kps, t_kps);
        let betas = PairBetas {
            database_id: database_id.to_string(),
            query: beta_q,
            database: beta_t,
        };
        (filtered, Some(betas), Some(q_star), Some(t_star))
    } else {
        (matches.clone(), None, None, None)
    };
    hook(&PairTrace {
        query_id: &query.id,
        database_id,
        variant: cfg.variant,
        query_keypoints: q_kps,
        database_keypoints: t_kps,
        query_masks: q_star.as_ref().unwrap_or(q_masks),
        database_masks: t_star.as_ref().unwrap_or(t_masks),
        matches: &matches,
        filtered: &filtered,
    });

    let corrs: Vec<Correspondence2D3D> = filtered
        .iter()
        .filter_map(|m| {
            sparse.point_of(ti, m.idx_b).map(|p| Correspondence2D3D {
                pixel: q_kps[m.idx_a].position,
                point: sparse.points3d[p],
                source_track: p,
            })
        })
        .collect();
    let ransac = RansacConfig {
        seed: pair_seed(cfg.seed(), &query.id, database_id),
        ..cfg.ransac
    };
    let candidate = match estimate_absolute_pose(&corrs, &query.intrinsics, &ransac) {
        Ok(mut c) => {
            c.source_image = database_id.to_string();
            Some(c)
        }
        Err(PoseEstimationError::InvalidConfig(msg)) => return Err(PipelineError::Config(msg)),
        Err(_) => None,
    };
    Ok(PairOutcome { candidate, betas })
}

/// Localizes one query; see [`localize_with_hook`].
pub fn localize(query: &QueryInput, map: &MapArtifacts, cfg: &PipelineConfig) -> Result<LocalizationResult, PipelineError> {
    localize_with_hook(query, map, cfg, None, &|_| {})
}

/// Localizes one query, calling `hook` once per retrieved database image
/// after mask filtering. With `debug_dir`, candidate renders and their
/// scores are written there.
pub fn localize_with_hook(
    query: &QueryInput,
    map: &MapArtifacts,
    cfg: &PipelineConfig,
    debug_dir: Option<&Path>,
    hook: &(dyn Fn(&PairTrace) + Sync),
) -> Result<LocalizationResult, PipelineError> {
    let start = Instant::now();
    let mut timings = StageTimings::default();
    if !query.rgb.same_size(query.masks.labels()) {
        return Err(PipelineError::InvalidInput(format!("query {}: mask size differs from image", query.id)));
    }
    let dynamic = cfg.variant.filters_masks();
    let q_masks = reassign_small_masks(&query.masks, cfg.gamma);

    let t = Instant::now();
    let original_dynamic = query.masks.layer_mask(Layer::Dynamic);
    let exclusion = (dynamic && original_dynamic.data().iter().any(|&b| b)).then_some(&original_dynamic);
    let (q_kps, q_desc) = query_features(query, exclusion, cfg)?;
    timings.features_ms = elapsed_ms(t);

    let t = Instant::now();
    let global = match &query.global {
        Some(g) => g.clone(),
        None => describe(&query.rgb),
    };
    let retrieved: Vec<&str> = find_closest_images(&global, &map.index, cfg.retrieval_k)?;
    timings.retrieval_ms = elapsed_ms(t);

    let t = Instant::now();
    let outcomes: Vec<PairOutcome> = retrieved
        .par_iter()
        .map(|db| localize_pair(query, &q_kps, &q_desc, &q_masks, exclusion, db, map, cfg, hook))
        .collect::<Result<_, _>>()?;
    timings.matching_ms = elapsed_ms(t);
    let mut betas = Vec::new();
    let mut candidates = Vec::new();
    for o in outcomes {
        betas.extend(o.betas);
        candidates.extend(o.candidate);
    }
    if candidates.is_empty() {
        return Err(PipelineError::NoPoseFound(query.id.clone()));
    }
    let mut candidates = sort_candidates(candidates);
    candidates.truncate(cfg.top_t);

    let t = Instant::now();
    let movable = if dynamic {
        q_masks.movable_mask()
    } else {
        Raster::new(query.rgb.width(), query.rgb.height(), false)
    };
    let mut select = cfg.select_config();
    select.keep_renders = debug_dir.is_some();
    let (best, score) = match select_best_pose(&query.rgb, &candidates, &map.mesh, &query.intrinsics, &movable, &select) {
        Ok(sel) => {
            if let Some(dir) = debug_dir {
                write_debug_dump(dir, &query.id, &sel)?;
            }
            (sel.best, sel.score.map(|s| s.value))
        }
        Err(e) => {
            log::warn!("query {}: no candidate could be compared ({e}); keeping the most inliers", query.id);
            (candidates[0].clone(), None)
        }
    };
    timings.selection_ms = elapsed_ms(t);
    timings.total_ms = elapsed_ms(start);
    Ok(LocalizationResult {
        query_id: query.id.clone(),
        pose: Some(best.pose),
        inlier_count: best.inlier_count,
        score,
        source_image: Some(best.source_image),
        candidates: candidates.len(),
        timings,
        betas,
    })
}

fn optional<T>(path: &Path, read: impl FnOnce(&Path) -> Result<T, io::IoError>) -> Result<Option<T>, PipelineError> {
    if path.is_file() {
        Ok(Some(read(path)?))
    } else {
        Ok(None)
    }
}

/// Reads `images/*.png` (sorted by id) with masks from `masks/` and optional
/// `intrinsics.txt`, `keypoints/`, `descriptors/`, `global/` and `matches/`
/// ingestion files.
pub fn load_queries(dir: &Path, map: &MapArtifacts, cfg: &PipelineConfig) -> Result<Vec<QueryInput>, PipelineError> {
    let images_dir = dir.join("images");
    if !images_dir.is_dir() {
        return Err(PipelineError::MissingFile(images_dir));
    }
    let intrinsics = optional(&dir.join("intrinsics.txt"), io::read_intrinsics)?.unwrap_or(map.intrinsics);
    let mut ids: Vec<String> = io::list_dir(&images_dir)?
        .iter()
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .filter_map(|p| p.file_stem().and_then(|s| s.to_str()).map(str::to_string))
        .collect();
    ids.sort();
    let db_ids = &map.sparse.image_ids;
    ids.par_iter()
        .map(|id| {
            let rgb = io::read_rgb_png(&images_dir.join(format!("{id}.png")))?;
            if rgb.width() != intrinsics.width as usize || rgb.height() != intrinsics.height as usize {
                return Err(PipelineError::InvalidInput(format!(
                    "query {id}: image {}x{} differs from intrinsics {}x{}",
                    rgb.width(),
                    rgb.height(),
                    intrinsics.width,
                    intrinsics.height
                )));
            }
            let masks = MaskSet::load(&dir.join("masks"), id, &cfg.taxonomy, rgb.width(), rgb.height())?;
            let mut q = QueryInput::new(id.clone(), rgb, intrinsics, masks);
            if let Some(kps) = optional(&dir.join("keypoints").join(format!("{id}.kpts")), io::read_keypoints)? {
                let desc = optional(&dir.join("descriptors").join(format!("{id}.desc")), io::read_descriptors)?
                    .map(|(dim, data)| Descriptors { dim, data });
                q.keypoints = Some((kps, desc));
            }
            if let Some(v) = optional(&dir.join("global").join(format!("{id}.gdesc")), io::read_global_descriptor)? {
                q.global = Some(GlobalDescriptor::ingested(v)?);
            }
            for db in db_ids {
                let p = dir.join("matches").join(io::matches_file_name(id, db));
                if let Some(m) = optional(&p, io::read_matches)? {
                    q.matches.insert(db.clone(), m);
                }
            }
            Ok(q)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub results: Vec<LocalizationResult>,
}

impl RunSummary {
    pub fn localized(&self) -> usize {
        self.results.iter().filter(|r| r.pose.is_some()).count()
    }
}

/// Localizes every query in `queries_dir` and writes `poses.txt` (localized
/// queries, in query order) and `report.txt` to `out_dir`.
pub fn run_localize(
    map_dir: &Path,
    queries_dir: &Path,
    out_dir: &Path,
    cfg: &PipelineConfig,
    debug_dir: Option<&Path>,
) -> Result<RunSummary, PipelineError> {
    let map = load_map(map_dir, cfg)?;
    let queries = load_queries(queries_dir, &map, cfg)?;
    log::info!("localizing {} queries ({} variant)", queries.len(), cfg.variant);
    let results: Vec<LocalizationResult> = queries
        .par_iter()
        .map(|q| {
            let start = Instant::now();
            match localize_with_hook(q, &map, cfg, debug_dir, &|_| {}) {
                Ok(r) => {
                    log::info!("{}: {} inliers from {}", q.id, r.inlier_count, r.source_image.as_deref().unwrap_or("-"));
                    Ok(r)
                }
                Err(PipelineError::NoPoseFound(_)) => {
                    log::info!("{}: no pose found", q.id);
                    Ok(LocalizationResult::failed(&q.id, elapsed_ms(start)))
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_, _>>()?;
    io::create_dir(out_dir)?;
    let poses: Vec<(String, Pose)> = results
        .iter()
        .filter_map(|r| r.pose.map(|p| (r.query_id.clone(), p)))
        .collect();
    io::write_poses(&out_dir.join("poses.txt"), &poses)?;
    let mut report = String::new();
    for r in &results {
        let _ = writeln!(report, "{}", r.report_line());
    }
    io::write_text(&out_dir.join("report.txt"), &report)?;
    Ok(RunSummary { results })
}
