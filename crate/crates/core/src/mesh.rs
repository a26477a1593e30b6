//! Indexed triangle mesh with per-vertex color.

use nalgebra::Vector3;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<[f32; 3]>,
    pub colors: Vec<[u8; 3]>,
    pub faces: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn vertex(&self, i: u32) -> Vector3<f64> {
        let v = self.vertices[i as usize];
        Vector3::new(v[0] as f64, v[1] as f64, v[2] as f64)
    }

    pub fn push_vertex(&mut self, p: &Vector3<f64>, color: [u8; 3]) -> u32 {
        self.vertices.push([p.x as f32, p.y as f32, p.z as f32]);
        self.colors.push(color);
        (self.vertices.len() - 1) as u32
    }

    /// Unit normal of a face following the right-hand rule, zero if degenerate.
    pub fn face_normal(&self, face: usize) -> Vector3<f64> {
        let [a, b, c] = self.faces[face];
        let (pa, pb, pc) = (self.vertex(a), self.vertex(b), self.vertex(c));
        let n = (pb - pa).cross(&(pc - pa));
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            Vector3::zeros()
        }
    }

    /// Appends `other`, reindexing its faces.
    pub fn append(&mut self, other: &TriMesh) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.colors.extend_from_slice(&other.colors);
        self.faces
            .extend(other.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
    }

    /// Axis-aligned bounds `(min, max)`; `None` for a mesh without vertices.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = self.vertices.first()?;
        let mut lo = Vector3::new(first[0] as f64, first[1] as f64, first[2] as f64);
        let mut hi = lo;
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k] as f64);
                hi[k] = hi[k].max(v[k] as f64);
            }
        }
        Some((lo, hi))
    }
}
