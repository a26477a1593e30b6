//! Axis-aligned indoor scenes: a textured room, static furniture and
//! floor-standing movable objects.

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::texture::{base_color, shade_for, Material};
use super::SynthError;
use crate::mesh::TriMesh;

pub const PLACEMENT_ATTEMPTS: usize = 1000;

/// Footprint separation kept between placed objects and walls.
const CONTACT_MARGIN: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { min, max }
    }

    pub fn overlaps(&self, other: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] < other.max[k] && other.min[k] < self.max[k])
    }

    /// Unsigned distance from `p` to the box surface.
    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        let outside = Vector3::from_fn(|k, _| (self.min[k] - p[k]).max(p[k] - self.max[k]).max(0.0));
        if outside.norm() > 0.0 {
            return outside.norm();
        }
        (0..3)
            .map(|k| (p[k] - self.min[k]).min(self.max[k] - p[k]))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ShapeKind {
    Box { size: [f64; 3] },
    Cylinder { radius: f64, height: f64 },
}

/// A placed floor-standing shape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Box(Aabb),
    Cylinder { center: [f64; 2], radius: f64, height: f64 },
}

impl Shape {
    pub fn at(kind: ShapeKind, x: f64, z: f64) -> Self {
        match kind {
            ShapeKind::Box { size } => Shape::Box(Aabb::new(
                Vector3::new(x - size[0] / 2.0, 0.0, z - size[2] / 2.0),
                Vector3::new(x + size[0] / 2.0, size[1], z + size[2] / 2.0),
            )),
            ShapeKind::Cylinder { radius, height } => Shape::Cylinder {
                center: [x, z],
                radius,
                height,
            },
        }
    }

    pub fn kind(&self) -> ShapeKind {
        match *self {
            Shape::Box(b) => ShapeKind::Box {
                size: [b.max.x - b.min.x, b.max.y - b.min.y, b.max.z - b.min.z],
            },
            Shape::Cylinder { radius, height, .. } => ShapeKind::Cylinder { radius, height },
        }
    }

    /// Floor position of the footprint center.
    pub fn center(&self) -> [f64; 2] {
        match *self {
            Shape::Box(b) => [(b.min.x + b.max.x) / 2.0, (b.min.z + b.max.z) / 2.0],
            Shape::Cylinder { center, .. } => center,
        }
    }

    pub fn translated(&self, dx: f64, dz: f64) -> Self {
        let d = Vector3::new(dx, 0.0, dz);
        match *self {
            Shape::Box(b) => Shape::Box(Aabb::new(b.min + d, b.max + d)),
            Shape::Cylinder { center, radius, height } => Shape::Cylinder {
                center: [center[0] + dx, center[1] + dz],
                radius,
                height,
            },
        }
    }

    pub fn bounds(&self) -> Aabb {
        match *self {
            Shape::Box(b) => b,
            Shape::Cylinder { center, radius, height } => Aabb::new(
                Vector3::new(center[0] - radius, 0.0, center[1] - radius),
                Vector3::new(center[0] + radius, height, center[1] + radius),
            ),
        }
    }

    /// Distance between floor footprints, negative when they overlap.
    pub fn footprint_gap(&self, other: &Shape) -> f64 {
        match (self, other) {
            (Shape::Cylinder { center: a, radius: ra, .. }, Shape::Cylinder { center: b, radius: rb, .. }) => {
                ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt() - ra - rb
            }
            (Shape::Cylinder { center, radius, .. }, Shape::Box(b)) | (Shape::Box(b), Shape::Cylinder { center, radius, .. }) => {
                rect_point_gap(b, center[0], center[1]) - radius
            }
            (Shape::Box(a), Shape::Box(b)) => {
                let dx = (a.min.x - b.max.x).max(b.min.x - a.max.x);
                let dz = (a.min.z - b.max.z).max(b.min.z - a.max.z);
                if dx > 0.0 && dz > 0.0 {
                    (dx * dx + dz * dz).sqrt()
                } else {
                    dx.max(dz)
                }
            }
        }
    }

    /// Distance from a floor point to the footprint, negative inside.
    pub fn point_gap(&self, x: f64, z: f64) -> f64 {
        match self {
            Shape::Box(b) => rect_point_gap(b, x, z),
            Shape::Cylinder { center, radius, .. } => ((center[0] - x).powi(2) + (center[1] - z).powi(2)).sqrt() - radius,
        }
    }
}

fn rect_point_gap(b: &Aabb, x: f64, z: f64) -> f64 {
    let dx = (b.min.x - x).max(x - b.max.x);
    let dz = (b.min.z - z).max(z - b.max.z);
    if dx > 0.0 && dz > 0.0 {
        (dx * dx + dz * dz).sqrt()
    } else {
        dx.max(dz)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MovableSpec {
    pub class_name: String,
    pub kind: ShapeKind,
}

impl MovableSpec {
    pub fn person() -> Self {
        Self {
            class_name: "person".into(),
            kind: ShapeKind::Box { size: [0.55, 1.8, 0.4] },
        }
    }

    pub fn chair() -> Self {
        Self {
            class_name: "chair".into(),
            kind: ShapeKind::Box { size: [0.6, 1.0, 0.6] },
        }
    }

    pub fn bin() -> Self {
        Self {
            class_name: "bin".into(),
            kind: ShapeKind::Cylinder {
                radius: 0.35,
                height: 1.1,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    /// Room extents along x, y (height) and z.
    pub room: [f64; 3],
    pub furniture: usize,
    /// Plain-colored room surfaces; furniture stays textured.
    pub textureless: bool,
    pub movable: Vec<MovableSpec>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            room: [10.0, 3.0, 8.0],
            furniture: 5,
            textureless: false,
            movable: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub id: u16,
    pub class_name: String,
    pub shape: Shape,
    pub mesh: TriMesh,
    pub materials: Vec<Material>,
}

impl Instance {
    /// The same object, with its texture, moved to stand at floor position `to`.
    pub fn moved_to(&self, id: u16, to: [f64; 2]) -> Self {
        let from = self.shape.center();
        let (dx, dz) = (to[0] - from[0], to[1] - from[1]);
        let mut mesh = self.mesh.clone();
        for v in &mut mesh.vertices {
            v[0] += dx as f32;
            v[2] += dz as f32;
        }
        Self {
            id,
            class_name: self.class_name.clone(),
            shape: self.shape.translated(dx, dz),
            mesh,
            materials: self.materials.iter().map(|m| m.translated(dx, dz)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub spec: SceneSpec,
    pub environment: TriMesh,
    /// One material per environment face.
    pub materials: Vec<Material>,
    pub furniture: Vec<Aabb>,
    /// Objects standing in the room while it is mapped.
    pub movable: Vec<Instance>,
    next_material_seed: u64,
}

const NORMALS: [[f64; 3]; 6] = [
    [1.0, 0.0, 0.0],
    [-1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, 0.0, 1.0],
    [0.0, 0.0, -1.0],
];

fn plane_axes(axis: usize) -> [usize; 2] {
    match axis {
        0 => [2, 1],
        1 => [0, 2],
        _ => [0, 1],
    }
}

fn textured(seed: u64, normal: usize) -> Material {
    textured_at(seed, normal, [0.0; 3])
}

fn textured_at(seed: u64, normal: usize, origin: [f64; 3]) -> Material {
    Material::Planar {
        seed,
        axes: plane_axes(normal / 2),
        origin,
        shade: shade_for(&Vector3::from(NORMALS[normal])),
    }
}

fn material_color(m: &Material) -> [u8; 3] {
    match *m {
        Material::Plain { color, .. } => color,
        Material::Planar { seed, .. } | Material::Cylindrical { seed, .. } => base_color(seed).map(|c| (c * 160.0) as u8),
    }
}

/// Appends an axis-aligned quad on the face of `b` with the given normal index.
fn push_box_face(mesh: &mut TriMesh, mats: &mut Vec<Material>, b: &Aabb, normal: usize, material: Material) {
    let axis = normal / 2;
    let positive = normal % 2 == 0;
    let [u, v] = plane_axes(axis);
    let plane = if positive { b.max[axis] } else { b.min[axis] };
    let color = material_color(&material);
    let corner = |cu: f64, cv: f64| {
        let mut p = Vector3::zeros();
        p[axis] = plane;
        p[u] = cu;
        p[v] = cv;
        p
    };
    let ids = [
        mesh.push_vertex(&corner(b.min[u], b.min[v]), color),
        mesh.push_vertex(&corner(b.max[u], b.min[v]), color),
        mesh.push_vertex(&corner(b.max[u], b.max[v]), color),
        mesh.push_vertex(&corner(b.min[u], b.max[v]), color),
    ];
    mesh.faces.push([ids[0], ids[1], ids[2]]);
    mesh.faces.push([ids[0], ids[2], ids[3]]);
    mats.extend([material; 2]);
}

const CYLINDER_SEGMENTS: usize = 24;

fn push_cylinder(mesh: &mut TriMesh, mats: &mut Vec<Material>, center: [f64; 2], radius: f64, height: f64, seed: u64) {
    let side = Material::Cylindrical {
        seed,
        axis: center,
        radius,
        shade: 0.9,
    };
    let top = textured(seed ^ 0x7777, 2);
    let color = material_color(&side);
    let ring = |k: usize, y: f64| {
        let a = k as f64 / CYLINDER_SEGMENTS as f64 * std::f64::consts::TAU;
        Vector3::new(center[0] + radius * a.cos(), y, center[1] + radius * a.sin())
    };
    let apex = mesh.push_vertex(&Vector3::new(center[0], height, center[1]), color);
    for k in 0..CYLINDER_SEGMENTS {
        let k1 = (k + 1) % CYLINDER_SEGMENTS;
        let a0 = mesh.push_vertex(&ring(k, 0.0), color);
        let a1 = mesh.push_vertex(&ring(k1, 0.0), color);
        let b0 = mesh.push_vertex(&ring(k, height), color);
        let b1 = mesh.push_vertex(&ring(k1, height), color);
        mesh.faces.push([a0, a1, b1]);
        mesh.faces.push([a0, b1, b0]);
        mats.extend([side; 2]);
        mesh.faces.push([apex, b0, b1]);
        mats.push(top);
    }
}

impl Scene {
    pub fn room_bounds(&self) -> Aabb {
        Aabb::new(Vector3::zeros(), Vector3::from(self.spec.room))
    }

    fn fresh_seed(&mut self) -> u64 {
        self.next_material_seed += 1;
        self.spec.seed.wrapping_mul(1_000_003).wrapping_add(self.next_material_seed)
    }

    /// Distance from `p` to the nearest environment surface.
    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        self.furniture
            .iter()
            .map(|b| b.surface_distance(p))
            .fold(self.room_bounds().surface_distance(p), f64::min)
    }

    /// Whether a camera at floor position `(x, z)` keeps `clearance` from
    /// walls, furniture and placed movable objects.
    pub fn is_free(&self, x: f64, z: f64, clearance: f64) -> bool {
        let [w, _, d] = self.spec.room;
        if x < clearance || z < clearance || x > w - clearance || z > d - clearance {
            return false;
        }
        self.furniture.iter().all(|b| Shape::Box(*b).point_gap(x, z) >= clearance)
            && self.movable.iter().all(|m| m.shape.point_gap(x, z) >= clearance)
    }

    fn shape_fits(&self, shape: &Shape, others: &[Shape]) -> bool {
        let b = shape.bounds();
        let room = self.room_bounds();
        let inside = b.min.x >= CONTACT_MARGIN
            && b.min.z >= CONTACT_MARGIN
            && b.max.x <= room.max.x - CONTACT_MARGIN
            && b.max.z <= room.max.z - CONTACT_MARGIN
            && b.max.y <= room.max.y;
        inside
            && self.furniture.iter().all(|f| Shape::Box(*f).footprint_gap(shape) >= CONTACT_MARGIN)
            && self.movable.iter().all(|m| m.shape.footprint_gap(shape) >= CONTACT_MARGIN)
            && others.iter().all(|o| o.footprint_gap(shape) >= CONTACT_MARGIN)
    }

    /// Rejection-samples a collision-free placement of `spec` whose center
    /// comes from `propose` and which passes `accept`.
    pub fn place(
        &self,
        spec: &MovableSpec,
        rng: &mut impl Rng,
        others: &[Shape],
        mut propose: impl FnMut(&mut dyn rand::RngCore) -> [f64; 2],
        accept: impl Fn(&Shape) -> bool,
    ) -> Result<Shape, SynthError> {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let [x, z] = propose(rng);
            let shape = Shape::at(spec.kind, x, z);
            if self.shape_fits(&shape, others) && accept(&shape) {
                return Ok(shape);
            }
        }
        Err(SynthError::PlacementFailure {
            class_name: spec.class_name.clone(),
            attempts: PLACEMENT_ATTEMPTS,
        })
    }

    /// Builds the instance mesh for a placed shape.
    pub fn instantiate(&mut self, id: u16, spec: &MovableSpec, shape: Shape) -> Instance {
        let mut mesh = TriMesh::new();
        let mut materials = Vec::new();
        match shape {
            Shape::Box(b) => {
                let seed = self.fresh_seed();
                for n in 0..6 {
                    let m = textured_at(seed ^ n as u64, n, b.min.into());
                    push_box_face(&mut mesh, &mut materials, &b, n, m);
                }
            }
            Shape::Cylinder { center, radius, height } => {
                let seed = self.fresh_seed();
                push_cylinder(&mut mesh, &mut materials, center, radius, height, seed);
            }
        }
        Instance {
            id,
            class_name: spec.class_name.clone(),
            shape,
            mesh,
            materials,
        }
    }

    /// Environment plus `instances`; the returned owner per face is 0 for
    /// the environment, else the instance id.
    pub fn compose(&self, instances: &[Instance]) -> (TriMesh, Vec<Material>, Vec<u16>) {
        let mut mesh = self.environment.clone();
        let mut mats = self.materials.clone();
        let mut owner = vec![0u16; mesh.faces.len()];
        for inst in instances {
            mesh.append(&inst.mesh);
            mats.extend_from_slice(&inst.materials);
            owner.extend(std::iter::repeat_n(inst.id, inst.mesh.faces.len()));
        }
        (mesh, mats, owner)
    }
}

/// Deterministic from `spec.seed`.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene, SynthError> {
    let [w, h, d] = spec.room;
    if !(w > 2.0 && h > 2.0 && d > 2.0) {
        return Err(SynthError::InvalidSpec(format!("room {:?} too small", spec.room)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let room_materials: [Material; 6] = std::array::from_fn(|n| {
        if spec.textureless {
            let c = base_color(spec.seed.wrapping_add(n as u64 * 31)).map(|v| (v * 200.0) as u8);
            Material::Plain {
                color: c,
                shade: shade_for(&Vector3::from(NORMALS[n])),
            }
        } else {
            textured(spec.seed.wrapping_mul(7919).wrapping_add(n as u64 + 1), n)
        }
    });
    let mut scene = Scene {
        spec: spec.clone(),
        environment: TriMesh::new(),
        materials: Vec::new(),
        furniture: Vec::new(),
        movable: Vec::new(),
        next_material_seed: 100,
    };
    let room = scene.room_bounds();
    for n in 0..6 {
        // The room face with inward normal +x lies at x = 0, i.e. the box's min side.
        let outward = n ^ 1;
        push_box_face(&mut scene.environment, &mut scene.materials, &room, outward, room_materials[n]);
    }
    for _ in 0..spec.furniture {
        let tall = rng.random_bool(0.4);
        let size = [
            rng.random_range(0.6..1.8),
            if tall { rng.random_range(1.6..2.2) } else { rng.random_range(0.6..1.0) },
            rng.random_range(0.4..1.0),
        ];
        let size = if rng.random_bool(0.5) { [size[2], size[1], size[0]] } else { size };
        let fspec = MovableSpec {
            class_name: "furniture".into(),
            kind: ShapeKind::Box { size },
        };
        let others: Vec<Shape> = scene.furniture.iter().map(|b| Shape::Box(*b)).collect();
        let placed = scene.place(
            &fspec,
            &mut rng,
            &[],
            |r| [r.random_range(0.0..w), r.random_range(0.0..d)],
            |s| others.iter().all(|o| o.footprint_gap(s) >= 0.8),
        )?;
        let Shape::Box(b) = placed else { unreachable!() };
        let seed = scene.fresh_seed();
        for n in 0..6 {
            push_box_face(&mut scene.environment, &mut scene.materials, &b, n, textured(seed ^ n as u64, n));
        }
        scene.furniture.push(b);
    }
    for (k, mspec) in spec.movable.iter().enumerate() {
        let shape = scene.place(mspec, &mut rng, &[], |r| [r.random_range(0.0..w), r.random_range(0.0..d)], |_| true)?;
        let inst = scene.instantiate(k as u16 + 1, mspec, shape);
        scene.movable.push(inst);
    }
    Ok(scene)
}
