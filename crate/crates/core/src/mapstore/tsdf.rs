//! Dense truncated signed-distance volume fused from posed depth maps.

use nalgebra::{Vector2, Vector3};

use super::{MapError, MapImage};

/// Default voxel budget (about 640 MB of volume state).
pub const DEFAULT_MAX_VOXELS: usize = 32_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct TsdfVolume {
    pub voxel_size: f64,
    pub truncation: f64,
    /// World position of voxel (0, 0, 0)'s center.
    pub origin: Vector3<f64>,
    pub dims: [usize; 3],
    sdf: Vec<f32>,
    weight: Vec<f32>,
    color: Vec<[f32; 3]>,
}

impl TsdfVolume {
    pub fn new(
        voxel_size: f64,
        truncation: f64,
        origin: Vector3<f64>,
        dims: [usize; 3],
        max_voxels: usize,
    ) -> Result<Self, MapError> {
        if !(voxel_size > 0.0) || !(truncation >= 2.0 * voxel_size) {
            return Err(MapError::InvalidParameters(format!(
                "voxel_size {voxel_size}, truncation {truncation} (need truncation >= 2 voxel_size)"
            )));
        }
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .unwrap_or(usize::MAX);
        if n > max_voxels {
            return Err(MapError::VolumeTooLarge { dims, budget: max_voxels });
        }
        Ok(Self {
            voxel_size,
            truncation,
            origin,
            dims,
            sdf: vec![truncation as f32; n],
            weight: vec![0.0; n],
            color: vec![[0.0; 3]; n],
        })
    }

    /// Volume sampling an implicit function directly; used for analytic tests.
    pub fn from_fn(
        voxel_size: f64,
        truncation: f64,
        origin: Vector3<f64>,
        dims: [usize; 3],
        f: impl Fn(&Vector3<f64>) -> f64,
    ) -> Result<Self, MapError> {
        let mut v = Self::new(voxel_size, truncation, origin, dims, usize::MAX)?;
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let p = v.voxel_center(x, y, z);
                    let d = f(&p);
                    if d.abs() <= truncation {
                        let i = v.index(x, y, z);
                        v.sdf[i] = d as f32;
                        v.weight[i] = 1.0;
                        v.color[i] = [128.0; 3];
                    }
                }
            }
        }
        Ok(v)
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    #[inline]
    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Vector3<f64> {
        self.origin + Vector3::new(x as f64, y as f64, z as f64) * self.voxel_size
    }

    #[inline]
    pub fn sdf_at(&self, x: usize, y: usize, z: usize) -> f32 {
        self.sdf[self.index(x, y, z)]
    }

    #[inline]
    pub fn weight_at(&self, x: usize, y: usize, z: usize) -> f32 {
        self.weight[self.index(x, y, z)]
    }

    #[inline]
    pub fn color_at(&self, x: usize, y: usize, z: usize) -> [f32; 3] {
        self.color[self.index(x, y, z)]
    }

    pub fn weights(&self) -> &[f32] {
        &self.weight
    }

    pub fn sdf_values(&self) -> &[f32] {
        &self.sdf
    }

    /// World-space bounds covered by voxel centers.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let hi = self.voxel_center(self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1);
        (self.origin, hi)
    }

    pub fn observed_voxels(&self) -> usize {
        self.weight.iter().filter(|w| **w > 0.0).count()
    }

    /// Projective update from one posed depth image. Only voxels within the
    /// truncation band of the measured surface are touched.
    pub fn integrate(&mut self, image: &MapImage) {
        let intr = &image.intrinsics;
        let depth = &image.depth;
        let pose = &image.pose;
        let Some((lo, hi)) = depth_bounds(image, 2, 1.5 * self.truncation) else {
            return;
        };
        let to_idx = |v: f64, o: f64| (v - o) / self.voxel_size;
        let range = |k: usize| {
            let a = to_idx(lo[k], self.origin[k]).floor().max(0.0) as usize;
            let b = to_idx(hi[k], self.origin[k]).ceil();
            let b = if b < 0.0 { 0 } else { (b as usize + 1).min(self.dims[k]) };
            (a.min(self.dims[k]), b)
        };
        let (x0, x1) = range(0);
        let (y0, y1) = range(1);
        let (z0, z1) = range(2);
        let trunc = self.truncation;
        let r = pose.rotation();
        let t = pose.translation();
        let (w, h) = (depth.width(), depth.height());
        for z in z0..z1 {
            for y in y0..y1 {
                // Camera-frame position is affine in x; step it incrementally.
                let p0 = self.voxel_center(x0, y, z);
                let mut pc = r * p0 + t;
                let step = r.column(0) * self.voxel_size;
                for x in x0..x1 {
                    let cur = pc;
                    pc += step;
                    if cur.z <= 1e-6 {
                        continue;
                    }
                    let u = intr.focal * cur.x / cur.z + intr.principal_point.x;
                    let v = intr.focal * cur.y / cur.z + intr.principal_point.y;
                    let (ui, vi) = (u.round(), v.round());
                    if ui < 0.0 || vi < 0.0 || ui >= w as f64 || vi >= h as f64 {
                        continue;
                    }
                    let (ui, vi) = (ui as usize, vi as usize);
                    let d = *depth.get(ui, vi) as f64;
                    if d <= 0.0 {
                        continue;
                    }
                    let sdf = d - cur.z;
                    if sdf < -trunc || sdf > trunc {
                        continue;
                    }
                    let i = self.index(x, y, z);
                    let w0 = self.weight[i];
                    let w1 = w0 + 1.0;
                    self.sdf[i] = ((self.sdf[i] * w0 + sdf as f32) / w1).clamp(-trunc as f32, trunc as f32);
                    let c = image.rgb.get(ui, vi);
                    let acc = &mut self.color[i];
                    for k in 0..3 {
                        acc[k] = (acc[k] * w0 + c[k] as f32) / w1;
                    }
                    self.weight[i] = w1;
                }
            }
        }
    }
}

/// AABB of back-projected valid depth samples (every `stride` pixels), grown by `margin`.
fn depth_bounds(image: &MapImage, stride: usize, margin: f64) -> Option<(Vector3<f64>, Vector3<f64>)> {
    let depth = &image.depth;
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    let mut any = false;
    let mut visit = |x: usize, y: usize| {
        let d = *depth.get(x, y) as f64;
        if d > 0.0 {
            let p = image.pose.unproject(&image.intrinsics, &Vector2::new(x as f64, y as f64), d);
            lo = lo.inf(&p);
            hi = hi.sup(&p);
            any = true;
        }
    };
    let (w, h) = (depth.width(), depth.height());
    for y in (0..h).step_by(stride) {
        for x in (0..w).step_by(stride) {
            visit(x, y);
        }
        visit(w - 1, y);
    }
    for x in (0..w).step_by(stride) {
        visit(x, h - 1);
    }
    any.then(|| (lo - Vector3::repeat(margin), hi + Vector3::repeat(margin)))
}

/// Fuses all images into a volume sized to their back-projected depth.
pub fn fuse_tsdf(images: &[MapImage], voxel_size: f64, truncation: f64) -> Result<TsdfVolume, MapError> {
    fuse_tsdf_with_budget(images, voxel_size, truncation, DEFAULT_MAX_VOXELS)
}

pub fn fuse_tsdf_with_budget(
    images: &[MapImage],
    voxel_size: f64,
    truncation: f64,
    max_voxels: usize,
) -> Result<TsdfVolume, MapError> {
    if images.is_empty() {
        return Err(MapError::NoImages);
    }
    if !(voxel_size > 0.0) || !(truncation >= 2.0 * voxel_size) {
        return Err(MapError::InvalidParameters(format!(
            "voxel_size {voxel_size}, truncation {truncation} (need truncation >= 2 voxel_size)"
        )));
    }
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for img in images {
        if let Some((a, b)) = depth_bounds(img, 4, 2.0 * truncation) {
            lo = lo.inf(&a);
            hi = hi.sup(&b);
        }
    }
    if !lo.iter().all(|v| v.is_finite()) {
        return Err(MapError::EmptyVolume);
    }
    // Snap the origin to the voxel lattice so results do not depend on image order.
    let origin = (lo / voxel_size).map(f64::floor) * voxel_size;
    let dims = [0, 1, 2].map(|k| ((hi[k] - origin[k]) / voxel_size).ceil() as usize + 1);
    let mut vol = TsdfVolume::new(voxel_size, truncation, origin, dims, max_voxels)?;
    for img in images {
        vol.integrate(img);
    }
    Ok(vol)
}
