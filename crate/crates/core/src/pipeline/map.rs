//! Offline map preprocessing and loading of its artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::{PipelineConfig, PipelineError};
use crate::dynfilter::{reassign_small_masks, Layer, MaskSet};
use crate::features::{describe_keypoints, detect_and_describe, Descriptors, GradientField, Match};
use crate::geom::{CameraIntrinsics, Pose};
use crate::io;
use crate::mapstore::{
    build_sparse_model_from_features, extract_mesh, fuse_tsdf_with_budget, ImageFeatures, MapImage, SparseConfig,
    SparseModel,
};
use crate::mesh::TriMesh;
use crate::raster::to_gray;
use crate::retrieval::{describe, GlobalDescriptor};

pub const CHECKSUM_FILE: &str = "build.sha256";
const LAYERS_FILE: &str = "mask_layers.txt";

/// Input subdirectories covered by the build checksum.
const INPUT_DIRS: [&str; 7] = ["images", "depth", "masks", "keypoints", "descriptors", "matches", "global"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BuildStatus {
    Built,
    /// Inputs and parameters match the previous build; nothing was recomputed.
    UpToDate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BuildReport {
    pub status: BuildStatus,
    pub checksum: String,
    pub images: usize,
    pub points: usize,
    pub mesh_vertices: usize,
    pub mesh_faces: usize,
}

/// Everything the online stage reads from a built map.
#[derive(Clone, Debug)]
pub struct MapArtifacts {
    pub dir: PathBuf,
    pub intrinsics: CameraIntrinsics,
    pub mesh: TriMesh,
    pub sparse: SparseModel,
    /// Global descriptors aligned with `sparse.image_ids`.
    pub index: Vec<(String, GlobalDescriptor)>,
    /// Database masks after small-mask reassignment, aligned with `sparse.image_ids`.
    pub masks: Vec<MaskSet>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn files_under(root: &Path, rel: &Path, out: &mut Vec<PathBuf>) -> Result<(), PipelineError> {
    for p in io::list_dir(&root.join(rel))? {
        let name = rel.join(p.file_name().expect("listed entry has a name"));
        if p.is_dir() {
            files_under(root, &name, out)?;
        } else {
            out.push(name);
        }
    }
    Ok(())
}

/// Digest of every map input file and the map-relevant parameters.
pub fn map_checksum(dir: &Path, cfg: &PipelineConfig) -> Result<String, PipelineError> {
    let mut files = Vec::new();
    for f in ["intrinsics.txt", "poses.txt"] {
        let p = dir.join(f);
        if !p.is_file() {
            return Err(PipelineError::MissingFile(p));
        }
        files.push(PathBuf::from(f));
    }
    for d in INPUT_DIRS {
        if dir.join(d).is_dir() {
            files_under(dir, Path::new(d), &mut files)?;
        }
    }
    let mut h = Sha256::new();
    h.update(cfg.map_fingerprint().as_bytes());
    for rel in &files {
        let bytes = io::read_bytes(&dir.join(rel))?;
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(sha256_hex(&h.finalize()))
}

fn depth_path(dir: &Path, id: &str) -> Result<PathBuf, PipelineError> {
    let png = dir.join("depth").join(format!("{id}.png"));
    if png.is_file() {
        return Ok(png);
    }
    let bin = dir.join("depth").join(format!("{id}.bin"));
    if bin.is_file() {
        return Ok(bin);
    }
    Err(PipelineError::MissingFile(png))
}

fn read_images(dir: &Path, intr: &CameraIntrinsics, poses: &[(String, Pose)]) -> Result<Vec<MapImage>, PipelineError> {
    poses
        .par_iter()
        .map(|(id, pose)| {
            let rgb_path = dir.join("images").join(format!("{id}.png"));
            if !rgb_path.is_file() {
                return Err(PipelineError::MissingFile(rgb_path));
            }
            let rgb = io::read_rgb_png(&rgb_path)?;
            let depth = io::read_depth(&depth_path(dir, id)?)?;
            Ok(MapImage::new(id.clone(), rgb, depth, *pose, *intr)?)
        })
        .collect()
}

fn read_masks(dir: &Path, ids: &[String], cfg: &PipelineConfig, intr: &CameraIntrinsics) -> Result<Vec<MaskSet>, PipelineError> {
    let (w, h) = (intr.width as usize, intr.height as usize);
    ids.par_iter()
        .map(|id| Ok(MaskSet::load(&dir.join("masks"), id, &cfg.taxonomy, w, h)?))
        .collect()
}

fn read_globals(dir: &Path, images: &[MapImage]) -> Result<Vec<GlobalDescriptor>, PipelineError> {
    let gdir = dir.join("global");
    if !gdir.is_dir() {
        return Ok(images.par_iter().map(|img| describe(&img.rgb)).collect());
    }
    images
        .iter()
        .map(|img| {
            let p = gdir.join(format!("{}.gdesc", img.id));
            if !p.is_file() {
                return Err(PipelineError::MissingFile(p));
            }
            Ok(GlobalDescriptor::ingested(io::read_global_descriptor(&p)?)?)
        })
        .collect()
}

/// Ingested keypoints (and descriptors, when present) or detection with the
/// original dynamic layer excluded.
fn image_features(dir: &Path, img: &MapImage, cfg: &PipelineConfig) -> Result<ImageFeatures, PipelineError> {
    let kp_path = dir.join("keypoints").join(format!("{}.kpts", img.id));
    if kp_path.is_file() {
        let keypoints = io::read_keypoints(&kp_path)?;
        let desc_path = dir.join("descriptors").join(format!("{}.desc", img.id));
        let descriptors = if desc_path.is_file() {
            let (dim, data) = io::read_descriptors(&desc_path)?;
            let d = Descriptors { dim, data };
            if d.len() != keypoints.len() {
                return Err(PipelineError::InvalidInput(format!(
                    "{}: {} descriptors for {} keypoints",
                    desc_path.display(),
                    d.len(),
                    keypoints.len()
                )));
            }
            d
        } else {
            let field = GradientField::new(&to_gray(&img.rgb), cfg.features.smoothing_sigma);
            describe_keypoints(&field, &keypoints, cfg.features.patch)
        };
        return Ok(ImageFeatures { keypoints, descriptors });
    }
    // Objects on the dynamic layer keep their features here; localization
    // decides per variant whether to use them.
    let (keypoints, descriptors) = detect_and_describe(&img.rgb, None, &cfg.features)?;
    Ok(ImageFeatures { keypoints, descriptors })
}

/// Matches from `matches/<a>__<b>.matches`, keyed by image index pair `(i, j)`, `i < j`.
fn read_ingested_matches(dir: &Path, ids: &[String]) -> Result<BTreeMap<(usize, usize), Vec<Match>>, PipelineError> {
    let mdir = dir.join("matches");
    let mut out = BTreeMap::new();
    if !mdir.is_dir() {
        return Ok(out);
    }
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    for p in io::list_dir(&mdir)? {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let Some(stem) = name.strip_suffix(".matches") else {
            continue;
        };
        let pair = stem
            .split_once("__")
            .and_then(|(a, b)| Some((*index.get(a)?, *index.get(b)?)));
        let Some((a, b)) = pair else {
            return Err(PipelineError::InvalidInput(format!(
                "{}: name does not pair two database images",
                p.display()
            )));
        };
        let mut m = io::read_matches(&p)?;
        let key = if a < b {
            (a, b)
        } else {
            for x in &mut m {
                std::mem::swap(&mut x.idx_a, &mut x.idx_b);
            }
            (b, a)
        };
        out.entry(key).or_insert_with(Vec::new).extend(m);
    }
    Ok(out)
}

fn write_layers(path: &Path, ids: &[String], masks: &[MaskSet]) -> Result<(), PipelineError> {
    let mut s = String::new();
    for (id, m) in ids.iter().zip(masks) {
        for inst in m.instances() {
            let _ = writeln!(s, "{id} {} {} {} {}", inst.id, inst.class_name, inst.layer.name(), inst.pixel_count);
        }
    }
    Ok(io::write_text(path, &s)?)
}

fn read_layers(path: &Path) -> Result<BTreeMap<(String, u16), Layer>, PipelineError> {
    let mut out = BTreeMap::new();
    let bad = |ln: usize| PipelineError::InvalidInput(format!("{}:{ln}: expected `image instance class layer pixels`", path.display()));
    for (ln, line) in io::read_text(path)?.lines().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 5 {
            return Err(bad(ln + 1));
        }
        let id: u16 = toks[1].parse().map_err(|_| bad(ln + 1))?;
        let layer = Layer::parse(toks[3]).ok_or_else(|| bad(ln + 1))?;
        out.insert((toks[0].to_string(), id), layer);
    }
    Ok(out)
}

/// Fuses the mesh, builds the sparse model and reassigns database masks,
/// then persists everything under `dir`. Skips all work when the inputs
/// and parameters match the stored checksum, unless `force` is set.
pub fn preprocess_map(dir: &Path, cfg: &PipelineConfig, force: bool) -> Result<BuildReport, PipelineError> {
    let checksum = map_checksum(dir, cfg)?;
    let stamp = dir.join(CHECKSUM_FILE);
    if !force && stamp.is_file() && io::read_text(&stamp)?.trim() == checksum {
        if let Ok(map) = load_map(dir, cfg) {
            log::info!("map in {} is up to date", dir.display());
            return Ok(BuildReport {
                status: BuildStatus::UpToDate,
                checksum,
                images: map.sparse.image_ids.len(),
                points: map.sparse.num_points(),
                mesh_vertices: map.mesh.vertices.len(),
                mesh_faces: map.mesh.faces.len(),
            });
        }
    }
    let intr = io::read_intrinsics(&dir.join("intrinsics.txt"))?;
    let poses = io::read_poses(&dir.join("poses.txt"))?;
    if poses.is_empty() {
        return Err(PipelineError::InvalidInput(format!("{}: no database images", dir.join("poses.txt").display())));
    }
    let ids: Vec<String> = poses.iter().map(|(id, _)| id.clone()).collect();
    log::info!("reading {} database images", poses.len());
    let images = read_images(dir, &intr, &poses)?;

    log::info!("fusing TSDF (voxel {}, truncation {})", cfg.voxel_size, cfg.truncation);
    let mesh = {
        let vol = fuse_tsdf_with_budget(&images, cfg.voxel_size, cfg.truncation, cfg.max_voxels)?;
        extract_mesh(&vol)?
    };
    log::info!("mesh: {} vertices, {} faces", mesh.vertices.len(), mesh.faces.len());

    let original_masks = read_masks(dir, &ids, cfg, &intr)?;
    let masks: Vec<MaskSet> = original_masks.iter().map(|m| reassign_small_masks(m, cfg.gamma)).collect();

    log::info!("extracting features");
    let features: Vec<ImageFeatures> = images
        .par_iter()
        .map(|img| image_features(dir, img, cfg))
        .collect::<Result<_, _>>()?;
    let globals = read_globals(dir, &images)?;
    let ingested = read_ingested_matches(dir, &ids)?;
    let sparse_cfg = SparseConfig {
        retrieval_k: cfg.retrieval_k,
        epipolar: cfg.epipolar,
        features: cfg.features.clone(),
        matching: cfg.matching,
    };
    log::info!("building sparse model");
    let sparse = build_sparse_model_from_features(&images, features, &globals, &ingested, &sparse_cfg)?;
    log::info!("sparse model: {} points", sparse.num_points());

    // Stale stamp first, so an interrupted build is never taken as current.
    if stamp.exists() {
        io::write_text(&stamp, "")?;
    }
    io::write_ply(&dir.join("mesh.ply"), &mesh)?;
    let sparse_dir = dir.join("sparse");
    sparse.save(&sparse_dir)?;
    let gdir = sparse_dir.join("global");
    io::create_dir(&gdir)?;
    for (id, g) in ids.iter().zip(&globals) {
        io::write_global_descriptor(&gdir.join(format!("{id}.gdesc")), g.vector())?;
    }
    write_layers(&sparse_dir.join(LAYERS_FILE), &ids, &masks)?;
    io::write_text(&stamp, &format!("{checksum}\n"))?;
    Ok(BuildReport {
        status: BuildStatus::Built,
        checksum,
        images: ids.len(),
        points: sparse.num_points(),
        mesh_vertices: mesh.vertices.len(),
        mesh_faces: mesh.faces.len(),
    })
}

/// Loads a built map; fails when it is missing or stale for `cfg`.
pub fn load_map(dir: &Path, cfg: &PipelineConfig) -> Result<MapArtifacts, PipelineError> {
    let stamp = dir.join(CHECKSUM_FILE);
    if !stamp.is_file() || !dir.join("mesh.ply").is_file() {
        return Err(PipelineError::MapNotBuilt(dir.to_path_buf()));
    }
    if io::read_text(&stamp)?.trim() != map_checksum(dir, cfg)? {
        return Err(PipelineError::MapStale(dir.to_path_buf()));
    }
    let intrinsics = io::read_intrinsics(&dir.join("intrinsics.txt"))?;
    let mesh = io::read_ply(&dir.join("mesh.ply"))?;
    let sparse_dir = dir.join("sparse");
    let sparse = SparseModel::load(&sparse_dir)?;
    let index = sparse
        .image_ids
        .iter()
        .map(|id| {
            let v = io::read_global_descriptor(&sparse_dir.join("global").join(format!("{id}.gdesc")))?;
            Ok((id.clone(), GlobalDescriptor::ingested(v)?))
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let layers = read_layers(&sparse_dir.join(LAYERS_FILE))?;
    let masks = read_masks(dir, &sparse.image_ids, cfg, &intrinsics)?
        .into_iter()
        .zip(&sparse.image_ids)
        .map(|(m, id)| m.with_layers(|i| layers.get(&(id.clone(), i.id)).copied().unwrap_or(i.layer)))
        .collect();
    Ok(MapArtifacts {
        dir: dir.to_path_buf(),
        intrinsics,
        mesh,
        sparse,
        index,
        masks,
    })
}
