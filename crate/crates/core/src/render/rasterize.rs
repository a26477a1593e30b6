//! Z-buffered triangle rasterization of a colored mesh.

use nalgebra::Vector3;

use super::{RenderError, SyntheticView};
use crate::geom::{CameraIntrinsics, Pose};
use crate::mesh::TriMesh;
use crate::raster::Raster;

/// Camera-space near plane; geometry closer than this is clipped.
pub const NEAR_PLANE: f64 = 1e-3;

#[derive(Clone, Copy)]
struct ClipVertex {
    cam: Vector3<f64>,
    /// Barycentric position within the unclipped face.
    bary: [f64; 3],
}

#[derive(Clone, Copy)]
struct ScreenVertex {
    x: f64,
    y: f64,
    inv_z: f64,
    /// Barycentrics premultiplied by `inv_z` for perspective-correct interpolation.
    bary_z: [f64; 3],
}

fn lerp(a: &ClipVertex, b: &ClipVertex, t: f64) -> ClipVertex {
    ClipVertex {
        cam: a.cam + (b.cam - a.cam) * t,
        bary: [0, 1, 2].map(|k| a.bary[k] + (b.bary[k] - a.bary[k]) * t),
    }
}

/// Sutherland-Hodgman against `z >= NEAR_PLANE`; at most four vertices out.
fn clip_near(tri: [ClipVertex; 3], out: &mut Vec<ClipVertex>) {
    out.clear();
    for i in 0..3 {
        let a = &tri[i];
        let b = &tri[(i + 1) % 3];
        let a_in = a.cam.z >= NEAR_PLANE;
        let b_in = b.cam.z >= NEAR_PLANE;
        if a_in {
            out.push(*a);
        }
        if a_in != b_in {
            let t = (NEAR_PLANE - a.cam.z) / (b.cam.z - a.cam.z);
            out.push(lerp(a, b, t));
        }
    }
}

/// Shared edges are owned by exactly one of their two triangles.
#[inline]
fn owns_edge(a: &ScreenVertex, b: &ScreenVertex) -> bool {
    let dy = b.y - a.y;
    dy > 0.0 || (dy == 0.0 && b.x < a.x)
}

#[inline]
fn edge(a: &ScreenVertex, b: &ScreenVertex, px: f64, py: f64) -> f64 {
    (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x)
}

/// Per-pixel nearest surface: camera-frame depth, face index and
/// perspective-correct barycentrics within that face.
#[derive(Clone, Debug, PartialEq)]
pub struct GBuffer {
    pub width: usize,
    pub height: usize,
    /// `f64::INFINITY` where nothing was drawn.
    pub depth: Vec<f64>,
    /// `NO_FACE` where nothing was drawn.
    pub face: Vec<u32>,
    pub bary: Vec<[f32; 3]>,
}

pub const NO_FACE: u32 = u32::MAX;

impl GBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            depth: vec![f64::INFINITY; width * height],
            face: vec![NO_FACE; width * height],
            bary: vec![[0.0; 3]; width * height],
        }
    }

    pub fn covered(&self, i: usize) -> bool {
        self.face[i] != NO_FACE
    }

    fn draw(&mut self, face: u32, v: [ScreenVertex; 3]) {
        let mut v = v;
        let mut area = edge(&v[0], &v[1], v[2].x, v[2].y);
        if !area.is_finite() || area.abs() < 1e-12 {
            return;
        }
        if area < 0.0 {
            v.swap(1, 2);
            area = -area;
        }
        let min_x = v.iter().map(|p| p.x).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let max_x = v.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max).floor();
        let min_y = v.iter().map(|p| p.y).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let max_y = v.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max).floor();
        if max_x < 0.0 || max_y < 0.0 || min_x >= self.width as f64 || min_y >= self.height as f64 {
            return;
        }
        let max_x = max_x.min(self.width as f64 - 1.0) as usize;
        let max_y = max_y.min(self.height as f64 - 1.0) as usize;
        let (min_x, min_y) = (min_x as usize, min_y as usize);
        let own = [owns_edge(&v[1], &v[2]), owns_edge(&v[2], &v[0]), owns_edge(&v[0], &v[1])];
        for y in min_y..=max_y {
            let py = y as f64;
            for x in min_x..=max_x {
                let px = x as f64;
                let w = [edge(&v[1], &v[2], px, py), edge(&v[2], &v[0], px, py), edge(&v[0], &v[1], px, py)];
                if (0..3).any(|k| w[k] < 0.0 || (w[k] == 0.0 && !own[k])) {
                    continue;
                }
                let l = w.map(|e| e / area);
                let inv_z = l[0] * v[0].inv_z + l[1] * v[1].inv_z + l[2] * v[2].inv_z;
                if !(inv_z > 0.0) {
                    continue;
                }
                let z = 1.0 / inv_z;
                let i = y * self.width + x;
                if z < self.depth[i] {
                    self.depth[i] = z;
                    self.face[i] = face;
                    self.bary[i] = [0, 1, 2]
                        .map(|k| ((l[0] * v[0].bary_z[k] + l[1] * v[1].bary_z[k] + l[2] * v[2].bary_z[k]) * z) as f32);
                }
            }
        }
    }
}

/// Z-buffers all faces of `mesh` seen from `pose`. Back faces are drawn.
/// Pixel `(x, y)` is sampled at its integer coordinates, matching the
/// projection convention. Faces are drawn in order, so equal depths keep
/// the earlier face.
pub fn rasterize(mesh: &TriMesh, pose: &Pose, intr: &CameraIntrinsics) -> GBuffer {
    let (width, height) = (intr.width as usize, intr.height as usize);
    let mut gb = GBuffer::new(width, height);
    let cam: Vec<Vector3<f64>> = (0..mesh.vertices.len() as u32)
        .map(|i| pose.transform(&mesh.vertex(i)))
        .collect();
    let (f, cx, cy) = (intr.focal, intr.principal_point.x, intr.principal_point.y);
    let unit = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut poly = Vec::with_capacity(4);
    for (fi, face) in mesh.faces.iter().enumerate() {
        let tri = [0, 1, 2].map(|k| ClipVertex {
            cam: cam[face[k] as usize],
            bary: unit[k],
        });
        if tri.iter().all(|v| v.cam.z < NEAR_PLANE) {
            continue;
        }
        clip_near(tri, &mut poly);
        if poly.len() < 3 {
            continue;
        }
        let screen: Vec<ScreenVertex> = poly
            .iter()
            .map(|v| {
                let inv_z = 1.0 / v.cam.z;
                ScreenVertex {
                    x: f * v.cam.x * inv_z + cx,
                    y: f * v.cam.y * inv_z + cy,
                    inv_z,
                    bary_z: v.bary.map(|c| c * inv_z),
                }
            })
            .collect();
        for k in 1..screen.len() - 1 {
            gb.draw(fi as u32, [screen[0], screen[k], screen[k + 1]]);
        }
    }
    gb
}

/// Renders `mesh` with per-vertex colors interpolated across faces.
pub fn render_view(mesh: &TriMesh, pose: &Pose, intr: &CameraIntrinsics) -> Result<SyntheticView, RenderError> {
    if mesh.is_empty() {
        return Err(RenderError::EmptyMesh);
    }
    let gb = rasterize(mesh, pose, intr);
    let (width, height) = (gb.width, gb.height);
    let coverage = Raster::from_vec(width, height, gb.face.iter().map(|f| *f != NO_FACE).collect()).unwrap();
    let depth = Raster::from_vec(
        width,
        height,
        gb.depth.iter().map(|z| if z.is_finite() { *z as f32 } else { 0.0 }).collect(),
    )
    .unwrap();
    let rgb = Raster::from_vec(
        width,
        height,
        gb.face
            .iter()
            .zip(&gb.bary)
            .map(|(&fi, b)| {
                if fi == NO_FACE {
                    return [0; 3];
                }
                let face = mesh.faces[fi as usize];
                let c = face.map(|v| mesh.colors[v as usize]);
                [0, 1, 2].map(|k| {
                    let v = b[0] * c[0][k] as f32 + b[1] * c[1][k] as f32 + b[2] * c[2][k] as f32;
                    v.round().clamp(0.0, 255.0) as u8
                })
            })
            .collect(),
    )
    .unwrap();
    Ok(SyntheticView { rgb, depth, coverage })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 40.0, 30.0, 80, 60).unwrap()
    }

    fn quad(z0: f64, z1: f64) -> TriMesh {
        let mut m = TriMesh::new();
        let a = m.push_vertex(&Vector3::new(-1.0, -1.0, z0), [200, 0, 0]);
        let b = m.push_vertex(&Vector3::new(1.0, -1.0, z0), [200, 0, 0]);
        let c = m.push_vertex(&Vector3::new(1.0, 1.0, z1), [0, 0, 200]);
        let d = m.push_vertex(&Vector3::new(-1.0, 1.0, z1), [0, 0, 200]);
        m.faces.push([a, b, c]);
        m.faces.push([a, c, d]);
        m
    }

    #[test]
    fn empty_mesh_rejected() {
        assert!(matches!(render_view(&TriMesh::new(), &Pose::identity(), &intr()), Err(RenderError::EmptyMesh)));
    }

    #[test]
    fn fronto_parallel_quad_covers_exact_square() {
        let view = render_view(&quad(4.0, 4.0), &Pose::identity(), &intr()).unwrap();
        // Projected square spans x in [15, 65], y in [5, 55]; one closed edge per axis.
        let covered = view.coverage.data().iter().filter(|c| **c).count();
        assert!((50 * 50..=51 * 51).contains(&covered), "{covered}");
        for (c, d) in view.coverage.data().iter().zip(view.depth.data()) {
            if *c {
                assert!((*d - 4.0).abs() < 1e-6);
            } else {
                assert_eq!(*d, 0.0);
            }
        }
    }

    #[test]
    fn slanted_depth_matches_ray_plane_intersection() {
        let i = intr();
        let view = render_view(&quad(3.0, 5.0), &Pose::identity(), &i).unwrap();
        // Plane: z = 4 + y.
        let mut n = 0;
        for y in 0..60 {
            for x in 0..80 {
                if !*view.coverage.get(x, y) {
                    continue;
                }
                let ray = i.backproject(&nalgebra::Vector2::new(x as f64, y as f64));
                let z = 4.0 / (1.0 - ray.y);
                assert!((*view.depth.get(x, y) as f64 - z).abs() < 1e-5 * z);
                n += 1;
            }
        }
        assert!(n > 1000);
    }

    #[test]
    fn looking_away_covers_nothing() {
        let pose = Pose::from_axis_angle(&Vector3::y(), std::f64::consts::PI, Vector3::zeros());
        let view = render_view(&quad(4.0, 4.0), &pose, &intr()).unwrap();
        assert!(view.coverage.data().iter().all(|c| !c));
    }

    #[test]
    fn near_plane_clipping_keeps_visible_part() {
        // Floor strip passing under and behind the camera.
        let mut m = TriMesh::new();
        let a = m.push_vertex(&Vector3::new(-1.0, 0.5, -1.0), [9; 3]);
        let b = m.push_vertex(&Vector3::new(1.0, 0.5, -1.0), [9; 3]);
        let c = m.push_vertex(&Vector3::new(1.0, 0.5, 5.0), [9; 3]);
        let d = m.push_vertex(&Vector3::new(-1.0, 0.5, 5.0), [9; 3]);
        m.faces.extend([[a, b, c], [a, c, d]]);
        let view = render_view(&m, &Pose::identity(), &intr()).unwrap();
        assert!(view.coverage.data().iter().any(|c| *c));
        assert!(view.depth.data().iter().all(|d| *d == 0.0 || *d >= NEAR_PLANE as f32 * 0.999));
    }

    #[test]
    fn nearer_surface_wins() {
        let mut m = quad(4.0, 4.0);
        let mut near = quad(2.0, 2.0);
        near.colors.iter_mut().for_each(|c| *c = [0, 255, 0]);
        m.append(&near);
        let view = render_view(&m, &Pose::identity(), &intr()).unwrap();
        assert_eq!(*view.depth.get(40, 30), 2.0);
        assert_eq!(*view.rgb.get(40, 30), [0, 255, 0]);
    }
}
