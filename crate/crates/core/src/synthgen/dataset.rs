//! Rendering and writing database and query splits.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::sampling::{sample_query_poses, sample_sweep_poses, CutoutSampling};
use super::scene::{generate_scene, Instance, MovableSpec, Scene, SceneSpec, Shape};
use super::texture::Material;
use super::SynthError;
use crate::geom::{CameraIntrinsics, Pose};
use crate::io;
use crate::mesh::TriMesh;
use crate::raster::{DepthMap, LabelImage, Raster, RgbImage};
use crate::render::{rasterize, NO_FACE};

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub scene: SceneSpec,
    pub sweeps: usize,
    pub min_spacing: f64,
    pub camera_height: f64,
    pub sampling: CutoutSampling,
    pub queries: usize,
    pub intrinsics: CameraIntrinsics,
    /// Queries see the mapped movers (`scene.movable`) relocated in front of
    /// the camera, plus catalog objects; otherwise they see the room as mapped.
    pub dynamic: bool,
    /// Per-query occupancy targets are drawn uniformly from this range.
    pub occupancy_range: [f64; 2],
    /// Objects absent from the map that may appear in dynamic queries.
    pub catalog: Vec<MovableSpec>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            sweeps: 12,
            min_spacing: 1.5,
            camera_height: 1.5,
            sampling: CutoutSampling::default(),
            queries: 15,
            intrinsics: CameraIntrinsics::paper_default(),
            dynamic: false,
            occupancy_range: [0.0, 0.42],
            catalog: vec![MovableSpec::chair(), MovableSpec::bin()],
        }
    }
}

impl DatasetConfig {
    pub fn seed(&self) -> u64 {
        self.scene.seed
    }

    fn params(&self) -> Vec<(&'static str, String)> {
        let i = &self.intrinsics;
        vec![
            ("seed", self.seed().to_string()),
            ("room", format!("{} {} {}", self.scene.room[0], self.scene.room[1], self.scene.room[2])),
            ("furniture", self.scene.furniture.to_string()),
            ("textureless", self.scene.textureless.to_string()),
            ("sweeps", self.sweeps.to_string()),
            ("min_spacing", self.min_spacing.to_string()),
            ("camera_height", self.camera_height.to_string()),
            ("yaw_step_deg", self.sampling.yaw_step_deg.to_string()),
            (
                "pitch_levels_deg",
                self.sampling.pitch_levels_deg.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(","),
            ),
            ("queries", self.queries.to_string()),
            ("intrinsics", format!("{} {} {} {} {}", i.focal, i.principal_point.x, i.principal_point.y, i.width, i.height)),
            ("dynamic", self.dynamic.to_string()),
            (
                "movers",
                self.scene.movable.iter().map(|m| m.class_name.as_str()).collect::<Vec<_>>().join(","),
            ),
            ("occupancy_range", format!("{} {}", self.occupancy_range[0], self.occupancy_range[1])),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage {
    pub rgb: RgbImage,
    pub depth: DepthMap,
    /// Instance id per pixel, 0 for the environment.
    pub labels: LabelImage,
}

impl RenderedImage {
    pub fn occupancy(&self) -> f64 {
        self.labels.data().iter().filter(|l| **l != 0).count() as f64 / self.labels.len() as f64
    }
}

/// Renders `mesh` with per-face procedural materials; `owner` maps faces to
/// instance labels.
pub fn render_textured(
    mesh: &TriMesh,
    materials: &[Material],
    owner: &[u16],
    pose: &Pose,
    intr: &CameraIntrinsics,
) -> RenderedImage {
    let gb = rasterize(mesh, pose, intr);
    let (w, h) = (gb.width, gb.height);
    let mut rgb = Raster::new(w, h, [0u8; 3]);
    let mut depth = Raster::new(w, h, 0.0f32);
    let mut labels = Raster::new(w, h, 0u16);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let f = gb.face[i];
            if f == NO_FACE {
                continue;
            }
            let z = gb.depth[i];
            let p = pose.unproject(intr, &Vector2::new(x as f64, y as f64), z);
            rgb.set(x, y, materials[f as usize].color_at(&p));
            depth.set(x, y, z as f32);
            labels.set(x, y, owner[f as usize]);
        }
    }
    RenderedImage { rgb, depth, labels }
}

pub fn render_scene(scene: &Scene, instances: &[Instance], pose: &Pose, intr: &CameraIntrinsics) -> RenderedImage {
    let (mesh, mats, owner) = scene.compose(instances);
    render_textured(&mesh, &mats, &owner, pose, intr)
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuerySpec {
    pub id: String,
    pub pose: Pose,
    pub instances: Vec<Instance>,
}

/// Half of the horizontal field of view.
fn half_fov(intr: &CameraIntrinsics) -> f64 {
    (intr.width as f64 / 2.0 / intr.focal).atan()
}

/// Chance that a query object is one of the mapped movers rather than a
/// catalog object the map has never seen.
const MOVER_PROBABILITY: f64 = 0.7;

#[derive(Clone, Debug)]
enum Source {
    Mover(usize),
    Catalog(MovableSpec),
}

/// Places one or two objects in front of the camera so that their visible
/// footprint approaches a random occupancy target. Objects are either
/// `movers` relocated from their mapped positions, keeping their appearance,
/// or fresh `catalog` objects.
pub fn place_query_objects(
    scene: &mut Scene,
    pose: &Pose,
    intr: &CameraIntrinsics,
    movers: &[Instance],
    catalog: &[MovableSpec],
    target: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Instance>, SynthError> {
    const TRIES: usize = 40;
    if (catalog.is_empty() && movers.is_empty()) || target <= 0.0 {
        return Ok(Vec::new());
    }
    let center = pose.center();
    let fwd = pose.forward();
    let heading = fwd.x.atan2(fwd.z);
    let fov = half_fov(intr);
    let probe = intr.downscaled(4.0);
    let mut best: Option<(f64, Vec<(Source, Shape)>)> = None;
    let mut last_err = None;
    for _ in 0..TRIES {
        let count = if rng.random_bool(0.35) { 2 } else { 1 };
        let mut placed: Vec<(Source, Shape)> = Vec::new();
        for _ in 0..count {
            let free: Vec<usize> = (0..movers.len())
                .filter(|m| !placed.iter().any(|(s, _)| matches!(s, Source::Mover(u) if u == m)))
                .collect();
            let source = if !free.is_empty() && (catalog.is_empty() || rng.random_bool(MOVER_PROBABILITY)) {
                Source::Mover(free[rng.random_range(0..free.len())])
            } else if !catalog.is_empty() {
                Source::Catalog(catalog[rng.random_range(0..catalog.len())].clone())
            } else {
                continue;
            };
            let spec = match &source {
                Source::Mover(m) => MovableSpec {
                    class_name: movers[*m].class_name.clone(),
                    kind: movers[*m].shape.kind(),
                },
                Source::Catalog(spec) => spec.clone(),
            };
            let shapes: Vec<Shape> = placed.iter().map(|(_, s)| *s).collect();
            let r = scene.place(
                &spec,
                rng,
                &shapes,
                |r| {
                    let d = r.random_range(1.0..4.5);
                    let a = heading + r.random_range(-0.8..0.8) * fov;
                    [center.x + d * a.sin(), center.z + d * a.cos()]
                },
                |s| s.point_gap(center.x, center.z) >= 0.6,
            );
            match r {
                Ok(s) => placed.push((source, s)),
                Err(e) => last_err = Some(e),
            }
        }
        if placed.is_empty() {
            continue;
        }
        let instances = realize(scene, movers, &placed);
        let occ = render_scene(scene, &instances, pose, &probe).occupancy();
        let err = (occ - target).abs();
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, placed));
        }
        if err < 0.02 {
            break;
        }
    }
    match best {
        Some((_, placed)) => Ok(realize(scene, movers, &placed)),
        None => Err(last_err.unwrap_or(SynthError::PlacementFailure {
            class_name: "query object".into(),
            attempts: TRIES,
        })),
    }
}

fn realize(scene: &mut Scene, movers: &[Instance], placed: &[(Source, Shape)]) -> Vec<Instance> {
    placed
        .iter()
        .enumerate()
        .map(|(k, (source, shape))| {
            let id = k as u16 + 1;
            match source {
                Source::Mover(m) => movers[*m].moved_to(id, shape.center()),
                Source::Catalog(spec) => scene.instantiate(id, spec, *shape),
            }
        })
        .collect()
}

/// Everything needed to render a dataset, before any pixel is produced.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetPlan {
    pub scene: Scene,
    pub database: Vec<(String, Pose)>,
    pub queries: Vec<QuerySpec>,
}

pub fn plan_dataset(cfg: &DatasetConfig) -> Result<DatasetPlan, SynthError> {
    cfg.intrinsics.validate().map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let mut scene = generate_scene(&cfg.scene)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed());
    rng.set_stream(1);
    let database = sample_sweep_poses(&scene, cfg.sweeps, cfg.min_spacing, cfg.camera_height, &cfg.sampling, &mut rng)?;
    rng.set_stream(2);
    let query_poses = sample_query_poses(&scene, cfg.queries, cfg.camera_height, &mut rng)?;
    rng.set_stream(3);
    let movers = scene.movable.clone();
    let mut queries = Vec::with_capacity(query_poses.len());
    for (id, pose) in query_poses {
        let instances = if cfg.dynamic {
            let [lo, hi] = cfg.occupancy_range;
            let target = if hi > lo { rng.random_range(lo..hi) } else { lo };
            place_query_objects(&mut scene, &pose, &cfg.intrinsics, &movers, &cfg.catalog, target, &mut rng)?
        } else {
            movers.clone()
        };
        queries.push(QuerySpec { id, pose, instances });
    }
    Ok(DatasetPlan {
        scene,
        database,
        queries,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSummary {
    pub database_images: usize,
    pub queries: usize,
    /// `(query id, fraction of pixels on movable objects)`.
    pub occupancy: Vec<(String, f64)>,
}

impl DatasetSummary {
    pub fn mean_occupancy(&self) -> f64 {
        if self.occupancy.is_empty() {
            return 0.0;
        }
        self.occupancy.iter().map(|(_, o)| o).sum::<f64>() / self.occupancy.len() as f64
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}

fn write_masks(dir: &Path, id: &str, labels: &LabelImage, instances: &[Instance]) -> Result<(), SynthError> {
    let (png, table) = io::mask_paths(dir, id);
    io::write_label_png(&png, labels)?;
    let classes: Vec<(u16, String)> = instances.iter().map(|i| (i.id, i.class_name.clone())).collect();
    io::write_class_table(&table, &classes)?;
    Ok(())
}

/// Renders and writes the dataset under `out`:
/// `map/{images,depth,masks}/`, `map/poses.txt`, `map/intrinsics.txt`,
/// `query/{images,masks}/`, `query/gt_poses.txt`, `query/intrinsics.txt`,
/// `query/occupancy.txt` and `manifest.txt`.
pub fn generate_dataset(cfg: &DatasetConfig, out: &Path) -> Result<DatasetSummary, SynthError> {
    let plan = plan_dataset(cfg)?;
    write_dataset(cfg, &plan, out)
}

pub fn write_dataset(cfg: &DatasetConfig, plan: &DatasetPlan, out: &Path) -> Result<DatasetSummary, SynthError> {
    let intr = &cfg.intrinsics;
    let map = out.join("map");
    let query = out.join("query");
    for d in [
        map.join("images"),
        map.join("depth"),
        map.join("masks"),
        query.join("images"),
        query.join("masks"),
    ] {
        io::create_dir(&d)?;
    }
    let (map_mesh, map_mats, map_owner) = plan.scene.compose(&plan.scene.movable);
    plan.database.par_iter().try_for_each(|(id, pose)| -> Result<(), SynthError> {
        let img = render_textured(&map_mesh, &map_mats, &map_owner, pose, intr);
        io::write_rgb_png(&map.join("images").join(format!("{id}.png")), &img.rgb)?;
        io::write_depth_png(&map.join("depth").join(format!("{id}.png")), &img.depth)?;
        write_masks(&map.join("masks"), id, &img.labels, &plan.scene.movable)
    })?;
    io::write_poses(&map.join("poses.txt"), &plan.database)?;
    io::write_intrinsics(&map.join("intrinsics.txt"), intr)?;

    let occupancy: Vec<(String, f64)> = plan
        .queries
        .par_iter()
        .map(|q| -> Result<(String, f64), SynthError> {
            let img = render_scene(&plan.scene, &q.instances, &q.pose, intr);
            io::write_rgb_png(&query.join("images").join(format!("{}.png", q.id)), &img.rgb)?;
            write_masks(&query.join("masks"), &q.id, &img.labels, &q.instances)?;
            Ok((q.id.clone(), img.occupancy()))
        })
        .collect::<Result<_, _>>()?;
    let gt: Vec<(String, Pose)> = plan.queries.iter().map(|q| (q.id.clone(), q.pose)).collect();
    io::write_poses(&query.join("gt_poses.txt"), &gt)?;
    io::write_intrinsics(&query.join("intrinsics.txt"), intr)?;
    let mut occ_text = String::new();
    for (id, o) in &occupancy {
        writeln!(occ_text, "{id} {o}").unwrap();
    }
    io::write_text(&query.join("occupancy.txt"), &occ_text)?;

    let summary = DatasetSummary {
        database_images: plan.database.len(),
        queries: plan.queries.len(),
        occupancy,
    };
    let mut manifest = String::new();
    for (k, v) in cfg.params() {
        writeln!(manifest, "{k} {v}").unwrap();
    }
    let mut occ: Vec<f64> = summary.occupancy.iter().map(|(_, o)| *o).collect();
    writeln!(manifest, "occupancy_mean {}", summary.mean_occupancy()).unwrap();
    writeln!(manifest, "occupancy_median {}", crate::render::median(&mut occ).unwrap_or(0.0)).unwrap();
    for rel in files_under(out, Path::new(""))? {
        if rel == Path::new("manifest.txt") {
            continue;
        }
        let bytes = io::read_bytes(&out.join(&rel))?;
        writeln!(manifest, "sha256 {} {}", rel.display(), sha256_hex(&bytes)).unwrap();
    }
    io::write_text(&out.join("manifest.txt"), &manifest)?;
    Ok(summary)
}

/// Relative paths of all regular files under `root/rel`, sorted.
fn files_under(root: &Path, rel: &Path) -> Result<Vec<PathBuf>, SynthError> {
    let mut out = Vec::new();
    for p in io::list_dir(&root.join(rel))? {
        let name = rel.join(p.file_name().unwrap());
        if p.is_dir() {
            out.extend(files_under(root, &name)?);
        } else {
            out.push(name);
        }
    }
    Ok(out)
}

/// A point on the environment surface seen at pixel `(x, y)` of `img`.
pub fn surface_point(img: &RenderedImage, pose: &Pose, intr: &CameraIntrinsics, x: usize, y: usize) -> Option<Vector3<f64>> {
    let d = *img.depth.get(x, y) as f64;
    (d > 0.0).then(|| pose.unproject(intr, &Vector2::new(x as f64, y as f64), d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::scene::ShapeKind;

    fn small_cfg(dynamic: bool) -> DatasetConfig {
        DatasetConfig {
            sweeps: 2,
            queries: 4,
            intrinsics: CameraIntrinsics::paper_default().downscaled(8.0),
            dynamic,
            scene: SceneSpec {
                seed: 11,
                movable: if dynamic { vec![MovableSpec::person(); 2] } else { Vec::new() },
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn database_render_matches_query_off_masks() {
        let cfg = small_cfg(true);
        let plan = plan_dataset(&cfg).unwrap();
        let mut with_objects = 0;
        for q in &plan.queries {
            let db = render_scene(&plan.scene, &plan.scene.movable, &q.pose, &cfg.intrinsics);
            let dynq = render_scene(&plan.scene, &q.instances, &q.pose, &cfg.intrinsics);
            for i in 0..db.labels.len() {
                if dynq.labels.data()[i] == 0 && db.labels.data()[i] == 0 {
                    assert!((db.depth.data()[i] - dynq.depth.data()[i]).abs() <= 1e-6);
                    assert_eq!(db.rgb.data()[i], dynq.rgb.data()[i]);
                }
            }
            with_objects += usize::from(!q.instances.is_empty());
        }
        assert!(with_objects > 0);
    }

    #[test]
    fn masks_equal_independent_object_pass() {
        let cfg = small_cfg(true);
        let plan = plan_dataset(&cfg).unwrap();
        for q in plan.queries.iter().filter(|q| !q.instances.is_empty()) {
            let img = render_scene(&plan.scene, &q.instances, &q.pose, &cfg.intrinsics);
            let env = rasterize(&plan.scene.environment, &q.pose, &cfg.intrinsics);
            let mut objects = TriMesh::new();
            for inst in &q.instances {
                objects.append(&inst.mesh);
            }
            let obj = rasterize(&objects, &q.pose, &cfg.intrinsics);
            for i in 0..env.depth.len() {
                let expect = obj.depth[i] < env.depth[i];
                assert_eq!(img.labels.data()[i] != 0, expect);
            }
        }
    }

    #[test]
    fn single_box_occupancy_near_target() {
        let mut scene = generate_scene(&SceneSpec {
            furniture: 0,
            ..Default::default()
        })
        .unwrap();
        let intr = CameraIntrinsics::paper_default().downscaled(4.0);
        let pose = super::super::sampling::view_pose(&Vector3::new(5.0, 1.5, 2.0), 0.0, 0.0);
        let spec = MovableSpec {
            class_name: "crate".into(),
            kind: ShapeKind::Box { size: [1.0, 2.5, 0.2] },
        };
        // Box 1 wide at 3.0 depth: 1.0·f/3 px wide, visible from the floor to the top of the frame.
        let inst = scene.instantiate(1, &spec, Shape::at(spec.kind, 5.0, 5.1));
        let img = render_scene(&scene, &[inst], &pose, &intr);
        let occ = img.occupancy();
        assert!((0.15..=0.25).contains(&occ), "{occ}");
    }

    #[test]
    fn relocated_movers_keep_their_appearance() {
        let cfg = small_cfg(true);
        let plan = plan_dataset(&cfg).unwrap();
        let mapped = &plan.scene.movable[0];
        let moved = mapped.moved_to(1, [mapped.shape.center()[0] + 1.5, mapped.shape.center()[1] - 0.5]);
        for (k, face) in mapped.mesh.faces.iter().enumerate() {
            let v = face.map(|i| Vector3::from(mapped.mesh.vertices[i as usize].map(f64::from)));
            let p = (v[0] + v[1] + v[2]) / 3.0;
            let q = p + Vector3::new(1.5, 0.0, -0.5);
            assert_eq!(mapped.materials[k].color_at(&p), moved.materials[k].color_at(&q));
        }
    }

    #[test]
    fn written_dataset_is_deterministic() {
        let cfg = small_cfg(true);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let sa = generate_dataset(&cfg, a.path()).unwrap();
        let sb = generate_dataset(&cfg, b.path()).unwrap();
        assert_eq!(sa, sb);
        assert_eq!(sa.database_images, 72);
        let ma = io::read_text(&a.path().join("manifest.txt")).unwrap();
        assert_eq!(ma, io::read_text(&b.path().join("manifest.txt")).unwrap());
        assert!(ma.contains("sha256 query/gt_poses.txt"));
        // The mapped persons show up in database masks.
        let seen = io::list_dir(&a.path().join("map/masks"))
            .unwrap()
            .into_iter()
            .filter(|p| p.extension().is_some_and(|e| e == "png"))
            .filter(|p| io::read_label_png(p).unwrap().data().iter().any(|v| *v != 0))
            .count();
        assert!(seen > 0);
    }
}
