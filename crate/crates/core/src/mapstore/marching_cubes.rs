//! Zero-level surface extraction from a TSDF volume.

use std::collections::HashMap;

use nalgebra::Vector3;

use super::mc_tables::{EDGE_TABLE, TRIANGLE_TABLE};
use super::tsdf::TsdfVolume;
use super::MapError;
use crate::mesh::TriMesh;

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Marching cubes over cells whose eight corners are observed and inside
/// the truncation band. Vertices on shared edges are welded.
pub fn extract_mesh(vol: &TsdfVolume) -> Result<TriMesh, MapError> {
    if vol.weights().iter().all(|w| *w <= 0.0) {
        return Err(MapError::EmptyVolume);
    }
    let [nx, ny, nz] = vol.dims;
    let trunc = vol.truncation as f32;
    let mut mesh = TriMesh::new();
    // Edge key: (linear index of the lower corner, axis).
    let mut edge_vertex: HashMap<(usize, u8), u32> = HashMap::new();
    if nx < 2 || ny < 2 || nz < 2 {
        return Ok(mesh);
    }
    for z in 0..nz - 1 {
        for y in 0..ny - 1 {
            for x in 0..nx - 1 {
                let mut vals = [0.0f32; 8];
                let mut ok = true;
                for (k, c) in CORNERS.iter().enumerate() {
                    let (cx, cy, cz) = (x + c[0], y + c[1], z + c[2]);
                    let w = vol.weight_at(cx, cy, cz);
                    let s = vol.sdf_at(cx, cy, cz);
                    if w <= 0.0 || s.abs() >= trunc {
                        ok = false;
                        break;
                    }
                    vals[k] = s;
                }
                if !ok {
                    continue;
                }
                let mut cube = 0usize;
                for (k, v) in vals.iter().enumerate() {
                    if *v < 0.0 {
                        cube |= 1 << k;
                    }
                }
                let edges = EDGE_TABLE[cube];
                if edges == 0 {
                    continue;
                }
                let mut ids = [u32::MAX; 12];
                for (e, [a, b]) in EDGES.iter().enumerate() {
                    if edges & (1 << e) == 0 {
                        continue;
                    }
                    let ca = CORNERS[*a];
                    let cb = CORNERS[*b];
                    let lower = [x + ca[0].min(cb[0]), y + ca[1].min(cb[1]), z + ca[2].min(cb[2])];
                    let axis = (0..3).find(|&k| ca[k] != cb[k]).unwrap() as u8;
                    let key = (vol.index(lower[0], lower[1], lower[2]), axis);
                    let id = *edge_vertex.entry(key).or_insert_with(|| {
                        let (va, vb) = (vals[*a] as f64, vals[*b] as f64);
                        let t = if (vb - va).abs() > 1e-12 { (-va / (vb - va)).clamp(0.0, 1.0) } else { 0.5 };
                        let pa = vol.voxel_center(x + ca[0], y + ca[1], z + ca[2]);
                        let pb = vol.voxel_center(x + cb[0], y + cb[1], z + cb[2]);
                        let p: Vector3<f64> = pa + (pb - pa) * t;
                        let cola = vol.color_at(x + ca[0], y + ca[1], z + ca[2]);
                        let colb = vol.color_at(x + cb[0], y + cb[1], z + cb[2]);
                        let tf = t as f32;
                        let color = [0, 1, 2].map(|k| (cola[k] * (1.0 - tf) + colb[k] * tf).round().clamp(0.0, 255.0) as u8);
                        mesh.push_vertex(&p, color)
                    });
                    ids[e] = id;
                }
                let tri = &TRIANGLE_TABLE[cube];
                let mut k = 0;
                while k + 2 < 16 && tri[k] >= 0 {
                    let (a, b, c) = (ids[tri[k] as usize], ids[tri[k + 1] as usize], ids[tri[k + 2] as usize]);
                    if a != b && b != c && a != c {
                        mesh.faces.push([a, b, c]);
                    }
                    k += 3;
                }
            }
        }
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_volume_rejected() {
        let vol = TsdfVolume::new(0.1, 0.3, Vector3::zeros(), [4, 4, 4], 1000).unwrap();
        assert!(matches!(extract_mesh(&vol), Err(MapError::EmptyVolume)));
    }

    #[test]
    fn sphere_vertices_near_radius() {
        let vs = 0.05;
        let n = 60;
        let origin = Vector3::repeat(-1.5);
        let vol = TsdfVolume::from_fn(vs, 0.2, origin, [n, n, n], |p| p.norm() - 1.0).unwrap();
        let mesh = extract_mesh(&vol).unwrap();
        assert!(mesh.faces.len() > 1000);
        for i in 0..mesh.vertices.len() {
            let r = mesh.vertex(i as u32).norm();
            assert!((r - 1.0).abs() <= vs, "r = {r}");
        }
    }
}
