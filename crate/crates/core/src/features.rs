//! Harris keypoints, RootSIFT-style descriptors and mutual-NN matching.

use nalgebra::{DMatrix, Vector2};
use thiserror::Error;

use crate::raster::{gaussian_blur, gradients, to_gray, BinaryMask, GrayImage, RgbImage};

pub const DESCRIPTOR_DIM: usize = 128;
const CELLS: usize = 4;
const BINS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("descriptor dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("exclusion mask is {0}x{1}, image is {2}x{3}")]
    MaskSizeMismatch(usize, usize, usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    pub position: Vector2<f64>,
    pub response: f32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    pub idx_a: usize,
    pub idx_b: usize,
    pub score: f32,
}

/// Row-major descriptor block, `DESCRIPTOR_DIM` floats per keypoint.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Descriptors {
    pub dim: usize,
    pub data: Vec<f32>,
}

impl Descriptors {
    pub fn new(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureConfig {
    pub max_keypoints: usize,
    pub nms_radius: usize,
    pub harris_k: f32,
    /// Fraction of the strongest response a corner must reach.
    pub relative_threshold: f32,
    pub absolute_threshold: f32,
    pub smoothing_sigma: f32,
    pub integration_sigma: f32,
    pub patch: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            max_keypoints: 2048,
            nms_radius: 4,
            harris_k: 0.04,
            relative_threshold: 0.001,
            absolute_threshold: 1e-7,
            smoothing_sigma: 1.0,
            integration_sigma: 1.5,
            patch: 16,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchConfig {
    pub ratio: f32,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self { ratio: 0.85 }
    }
}

/// Harris response map on the smoothed gray image.
pub fn harris_response(gray: &GrayImage, cfg: &FeatureConfig) -> GrayImage {
    let smooth = gaussian_blur(gray, cfg.smoothing_sigma);
    let (gx, gy) = gradients(&smooth);
    let ixx = gaussian_blur(&zip_map(&gx, &gx, |a, b| a * b), cfg.integration_sigma);
    let iyy = gaussian_blur(&zip_map(&gy, &gy, |a, b| a * b), cfg.integration_sigma);
    let ixy = gaussian_blur(&zip_map(&gx, &gy, |a, b| a * b), cfg.integration_sigma);
    let k = cfg.harris_k;
    let mut out = ixx.clone();
    for (i, r) in out.data_mut().iter_mut().enumerate() {
        let (a, b, c) = (ixx.data()[i], iyy.data()[i], ixy.data()[i]);
        *r = a * b - c * c - k * (a + b) * (a + b);
    }
    out
}

fn zip_map(a: &GrayImage, b: &GrayImage, f: impl Fn(f32, f32) -> f32) -> GrayImage {
    let mut out = a.clone();
    for (o, (x, y)) in out.data_mut().iter_mut().zip(a.data().iter().zip(b.data())) {
        *o = f(*x, *y);
    }
    out
}

/// Corners after thresholding, non-maximum suppression and subpixel
/// refinement, strongest first.
pub fn detect_keypoints(gray: &GrayImage, exclusion: Option<&BinaryMask>, cfg: &FeatureConfig) -> Vec<Keypoint> {
    let (w, h) = (gray.width(), gray.height());
    let border = cfg.nms_radius.max(2) + 1;
    if w <= 2 * border || h <= 2 * border {
        return Vec::new();
    }
    let resp = harris_response(gray, cfg);
    let max_r = resp.data().iter().copied().fold(0.0f32, f32::max);
    let thresh = (cfg.relative_threshold * max_r).max(cfg.absolute_threshold);
    if max_r <= thresh {
        return Vec::new();
    }
    let r = cfg.nms_radius as isize;
    let mut kps = Vec::new();
    for y in border..h - border {
        for x in border..w - border {
            let v = *resp.get(x, y);
            if v <= thresh {
                continue;
            }
            // Strict maximum; ties resolved toward the earlier raster index.
            let mut is_max = true;
            'nms: for dy in -r..=r {
                for dx in -r..=r {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let xx = x as isize + dx;
                    let yy = y as isize + dy;
                    if xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
                        continue;
                    }
                    let o = *resp.get(xx as usize, yy as usize);
                    let earlier = dy < 0 || (dy == 0 && dx < 0);
                    if o > v || (o == v && earlier) {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if !is_max {
                continue;
            }
            let sub = |c: f32, m: f32, p: f32| {
                let denom = m - 2.0 * c + p;
                if denom < 0.0 {
                    (0.5 * (m - p) / denom).clamp(-0.5, 0.5) as f64
                } else {
                    0.0
                }
            };
            let ox = sub(v, *resp.get(x - 1, y), *resp.get(x + 1, y));
            let oy = sub(v, *resp.get(x, y - 1), *resp.get(x, y + 1));
            let position = Vector2::new(x as f64 + ox, y as f64 + oy);
            if let Some(mask) = exclusion {
                if mask.value_at(&position).copied().unwrap_or(false) {
                    continue;
                }
            }
            kps.push(Keypoint { position, response: v });
        }
    }
    kps.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.position.y.total_cmp(&b.position.y))
            .then(a.position.x.total_cmp(&b.position.x))
    });
    kps.truncate(cfg.max_keypoints);
    kps
}

/// Gradient field used for description: gradients of the lightly smoothed gray image.
pub struct GradientField {
    gx: GrayImage,
    gy: GrayImage,
}

impl GradientField {
    pub fn new(gray: &GrayImage, sigma: f32) -> Self {
        let (gx, gy) = gradients(&gaussian_blur(gray, sigma));
        Self { gx, gy }
    }

    pub fn from_rgb(rgb: &RgbImage, sigma: f32) -> Self {
        Self::new(&to_gray(rgb), sigma)
    }

    pub fn width(&self) -> usize {
        self.gx.width()
    }

    pub fn height(&self) -> usize {
        self.gx.height()
    }

    #[inline]
    fn sample(&self, x: f64, y: f64) -> (f32, f32) {
        let w = self.gx.width();
        let h = self.gx.height();
        let xf = x.clamp(0.0, (w - 1) as f64);
        let yf = y.clamp(0.0, (h - 1) as f64);
        let x0 = xf.floor() as usize;
        let y0 = yf.floor() as usize;
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let ax = (xf - x0 as f64) as f32;
        let ay = (yf - y0 as f64) as f32;
        let bil = |img: &GrayImage| {
            let a = img.get(x0, y0) * (1.0 - ax) + img.get(x1, y0) * ax;
            let b = img.get(x0, y1) * (1.0 - ax) + img.get(x1, y1) * ax;
            a * (1.0 - ay) + b * ay
        };
        (bil(&self.gx), bil(&self.gy))
    }

    /// RootSIFT-style descriptor of the `patch`×`patch` window centered at
    /// `center`. Returns false (and leaves zeros) when the patch has no gradient energy.
    pub fn describe_into(&self, center: &Vector2<f64>, patch: usize, out: &mut [f32]) -> bool {
        debug_assert_eq!(out.len(), DESCRIPTOR_DIM);
        out.iter_mut().for_each(|v| *v = 0.0);
        let half = patch as f64 / 2.0;
        let cell = patch as f32 / CELLS as f32;
        let sigma = half as f32;
        let inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
        let integer_center = center.x.fract() == 0.0 && center.y.fract() == 0.0;
        for j in 0..patch {
            let oy = j as f64 + 0.5 - half;
            for i in 0..patch {
                let ox = i as f64 + 0.5 - half;
                let (gx, gy) = if integer_center {
                    // Sample on pixel centers for dense grids.
                    let xx = (center.x + ox - 0.5).clamp(0.0, (self.width() - 1) as f64) as usize;
                    let yy = (center.y + oy - 0.5).clamp(0.0, (self.height() - 1) as f64) as usize;
                    (*self.gx.get(xx, yy), *self.gy.get(xx, yy))
                } else {
                    self.sample(center.x + ox, center.y + oy)
                };
                let mag = (gx * gx + gy * gy).sqrt();
                if mag == 0.0 {
                    continue;
                }
                let weight = (-((ox * ox + oy * oy) as f32) * inv_two_sigma2).exp();
                let m = mag * weight;
                // Orientation soft binning.
                let angle = gy.atan2(gx).rem_euclid(std::f32::consts::TAU);
                let ob = angle / std::f32::consts::TAU * BINS as f32 - 0.5;
                let o0 = ob.floor();
                let fo = ob - o0;
                let o0 = (o0 as i32).rem_euclid(BINS as i32) as usize;
                let o1 = (o0 + 1) % BINS;
                // Spatial bilinear binning between cell centers.
                let cx = (i as f32 + 0.5) / cell - 0.5;
                let cy = (j as f32 + 0.5) / cell - 0.5;
                let cx0 = cx.floor();
                let cy0 = cy.floor();
                let fx = cx - cx0;
                let fy = cy - cy0;
                for (dy, wy) in [(0i32, 1.0 - fy), (1, fy)] {
                    let yy = cy0 as i32 + dy;
                    if !(0..CELLS as i32).contains(&yy) || wy == 0.0 {
                        continue;
                    }
                    for (dx, wx) in [(0i32, 1.0 - fx), (1, fx)] {
                        let xx = cx0 as i32 + dx;
                        if !(0..CELLS as i32).contains(&xx) || wx == 0.0 {
                            continue;
                        }
                        let base = (yy as usize * CELLS + xx as usize) * BINS;
                        let s = m * wx * wy;
                        out[base + o0] += s * (1.0 - fo);
                        out[base + o1] += s * fo;
                    }
                }
            }
        }
        let l1: f32 = out.iter().sum();
        if !(l1 > 1e-12) {
            out.iter_mut().for_each(|v| *v = 0.0);
            return false;
        }
        for v in out.iter_mut() {
            *v = (*v / l1).sqrt();
        }
        true
    }
}

/// Descriptors at given keypoint positions.
pub fn describe_keypoints(field: &GradientField, keypoints: &[Keypoint], patch: usize) -> Descriptors {
    let mut desc = Descriptors {
        dim: DESCRIPTOR_DIM,
        data: vec![0.0; keypoints.len() * DESCRIPTOR_DIM],
    };
    for (k, chunk) in keypoints.iter().zip(desc.data.chunks_exact_mut(DESCRIPTOR_DIM)) {
        field.describe_into(&k.position, patch, chunk);
    }
    desc
}

/// Detection plus description; keypoints on set pixels of `exclusion` are dropped.
pub fn detect_and_describe(
    image: &RgbImage,
    exclusion: Option<&BinaryMask>,
    cfg: &FeatureConfig,
) -> Result<(Vec<Keypoint>, Descriptors), FeatureError> {
    if let Some(m) = exclusion {
        if !m.same_size(image) {
            return Err(FeatureError::MaskSizeMismatch(m.width(), m.height(), image.width(), image.height()));
        }
    }
    let gray = to_gray(image);
    let kps = detect_keypoints(&gray, exclusion, cfg);
    let field = GradientField::new(&gray, cfg.smoothing_sigma);
    let desc = describe_keypoints(&field, &kps, cfg.patch);
    Ok((kps, desc))
}

fn squared_norms(d: &Descriptors) -> Vec<f32> {
    (0..d.len()).map(|i| d.row(i).iter().map(|v| v * v).sum()).collect()
}

/// Mutual nearest neighbours that also pass the ratio test, ordered by `idx_a`.
pub fn match_descriptors(a: &Descriptors, b: &Descriptors, cfg: &MatchConfig) -> Result<Vec<Match>, FeatureError> {
    if a.dim != b.dim && !(a.is_empty() || b.is_empty()) {
        return Err(FeatureError::DimensionMismatch(a.dim, b.dim));
    }
    let (na, nb) = (a.len(), b.len());
    if na == 0 || nb == 0 {
        return Ok(Vec::new());
    }
    let dim = a.dim;
    let ma = DMatrix::from_row_slice(na, dim, &a.data);
    let mb = DMatrix::from_row_slice(nb, dim, &b.data);
    let dots = &ma * mb.transpose();
    let sa = squared_norms(a);
    let sb = squared_norms(b);
    let dist2 = |i: usize, j: usize| (sa[i] + sb[j] - 2.0 * dots[(i, j)]).max(0.0);

    // Best and second best in b for each a.
    let mut best_a = vec![(usize::MAX, f32::INFINITY, f32::INFINITY); na];
    // Best in a for each b.
    let mut best_b = vec![(usize::MAX, f32::INFINITY); nb];
    for j in 0..nb {
        for (i, ba) in best_a.iter_mut().enumerate() {
            let d = dist2(i, j);
            if d < ba.1 {
                ba.2 = ba.1;
                ba.1 = d;
                ba.0 = j;
            } else if d < ba.2 {
                ba.2 = d;
            }
            if d < best_b[j].1 {
                best_b[j] = (i, d);
            }
        }
    }
    let max_dist = std::f32::consts::SQRT_2;
    let ratio2 = cfg.ratio * cfg.ratio;
    let mut out = Vec::new();
    for (i, &(j, d1, d2)) in best_a.iter().enumerate() {
        if j == usize::MAX || best_b[j].0 != i {
            continue;
        }
        // With a single candidate the ratio test is vacuous.
        if d2.is_finite() && d1 >= ratio2 * d2 {
            continue;
        }
        let dist = d1.sqrt();
        out.push(Match {
            idx_a: i,
            idx_b: j,
            score: (1.0 - dist / max_dist).clamp(0.0, 1.0),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Raster;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn checkerboard(w: usize, h: usize, square: usize, ox: usize, oy: usize) -> RgbImage {
        Raster::from_fn(w, h, |x, y| {
            let v = if ((x + ox) / square + (y + oy) / square) % 2 == 0 { 30 } else { 220 };
            [v, v, v]
        })
    }

    fn random_texture(w: usize, h: usize, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coarse: Vec<u8> = (0..(w / 4 + 2) * (h / 4 + 2)).map(|_| rng.random()).collect();
        let cw = w / 4 + 2;
        Raster::from_fn(w, h, |x, y| {
            let v = coarse[(y / 4) * cw + x / 4];
            [v, v / 2, 255 - v]
        })
    }

    #[test]
    fn uniform_image_has_no_keypoints() {
        let img = Raster::new(64, 48, [128u8, 128, 128]);
        let (k, d) = detect_and_describe(&img, None, &FeatureConfig::default()).unwrap();
        assert!(k.is_empty() && d.is_empty());
    }

    #[test]
    fn checkerboard_corners_located() {
        // Pixel boundaries at multiples of 16 lie at continuous coordinate 15.5, 31.5, ...
        let img = checkerboard(96, 80, 16, 0, 0);
        let (kps, desc) = detect_and_describe(&img, None, &FeatureConfig::default()).unwrap();
        assert!(!kps.is_empty());
        for k in &kps {
            let near = |v: f64| {
                let c = ((v + 0.5) / 16.0).round() * 16.0 - 0.5;
                (v - c).abs()
            };
            assert!(near(k.position.x) <= 1.0 && near(k.position.y) <= 1.0, "{:?}", k.position);
        }
        // All inner corners away from the detection border are found.
        let inner = (1..6).flat_map(|i| (1..5).map(move |j| (i * 16, j * 16))).count();
        assert_eq!(kps.len(), inner);
        for i in 0..desc.len() {
            let n: f32 = desc.row(i).iter().map(|v| v * v).sum();
            assert!((n.sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn full_exclusion_removes_all() {
        let img = checkerboard(96, 80, 16, 0, 0);
        let mask = Raster::new(96, 80, true);
        let (k, _) = detect_and_describe(&img, Some(&mask), &FeatureConfig::default()).unwrap();
        assert!(k.is_empty());
    }

    #[test]
    fn identical_sets_match_identity() {
        let img = random_texture(160, 120, 3);
        let (_, d) = detect_and_describe(&img, None, &FeatureConfig::default()).unwrap();
        assert!(d.len() > 20);
        let m = match_descriptors(&d, &d, &MatchConfig::default()).unwrap();
        assert_eq!(m.len(), d.len());
        assert!(m.iter().all(|m| m.idx_a == m.idx_b && m.score > 0.999));
    }

    #[test]
    fn random_descriptors_mostly_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut gen = |n: usize| {
            let mut d = Descriptors::new(DESCRIPTOR_DIM);
            for _ in 0..n {
                let row: Vec<f32> = (0..DESCRIPTOR_DIM).map(|_| rng.random::<f32>()).collect();
                let n = row.iter().map(|v| v * v).sum::<f32>().sqrt();
                d.data.extend(row.iter().map(|v| v / n));
            }
            d
        };
        let a = gen(200);
        let b = gen(200);
        let m = match_descriptors(&a, &b, &MatchConfig::default()).unwrap();
        assert!(m.len() <= 20, "{} matches", m.len());
    }

    #[test]
    fn translated_copy_matches_shift() {
        let big = random_texture(200, 130, 5);
        let a = Raster::from_fn(180, 120, |x, y| *big.get(x + 5, y));
        let b = Raster::from_fn(180, 120, |x, y| *big.get(x, y));
        let cfg = FeatureConfig::default();
        let (ka, da) = detect_and_describe(&a, None, &cfg).unwrap();
        let (kb, db) = detect_and_describe(&b, None, &cfg).unwrap();
        let m = match_descriptors(&da, &db, &MatchConfig::default()).unwrap();
        assert!(m.len() > 20);
        let good = m
            .iter()
            .filter(|m| {
                let d = kb[m.idx_b].position - ka[m.idx_a].position;
                (d - Vector2::new(5.0, 0.0)).norm() <= 1.0
            })
            .count();
        assert!(good * 5 >= m.len() * 4, "{good}/{}", m.len());
    }

    #[test]
    fn dimension_mismatch() {
        let a = Descriptors { dim: 2, data: vec![1.0, 0.0] };
        let b = Descriptors { dim: 3, data: vec![1.0, 0.0, 0.0] };
        assert!(matches!(match_descriptors(&a, &b, &MatchConfig::default()), Err(FeatureError::DimensionMismatch(2, 3))));
    }
}
