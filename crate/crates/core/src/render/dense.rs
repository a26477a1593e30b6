//! Dense gradient descriptors on a regular grid and their comparison.

use rayon::prelude::*;

use super::{PhotometricScore, RenderError, SyntheticView};
use crate::features::{GradientField, DESCRIPTOR_DIM};
use crate::raster::{BinaryMask, RgbImage};

/// Smoothing applied before taking gradients; same as sparse description.
pub const DENSE_SMOOTHING: f32 = 1.0;

/// Below this many compared cells a score is logged as low-confidence.
pub const LOW_CONFIDENCE_CELLS: usize = 500;

/// Descriptors at grid cell centers `(half + i·stride, half + j·stride)`,
/// `half = patch / 2`, for every center whose patch fits in the image.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseField {
    pub patch: usize,
    pub stride: usize,
    pub cols: usize,
    pub rows: usize,
    pub data: Vec<f32>,
}

impl DenseField {
    pub fn len(&self) -> usize {
        self.cols * self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pixel center of cell `(i, j)`.
    pub fn center(&self, i: usize, j: usize) -> (usize, usize) {
        let half = self.patch / 2;
        (half + i * self.stride, half + j * self.stride)
    }

    pub fn cell(&self, i: usize, j: usize) -> &[f32] {
        let k = j * self.cols + i;
        &self.data[k * DESCRIPTOR_DIM..(k + 1) * DESCRIPTOR_DIM]
    }
}

fn grid_count(extent: usize, patch: usize, stride: usize) -> usize {
    if extent < patch {
        0
    } else {
        (extent - patch) / stride + 1
    }
}

pub fn dense_descriptor_field(image: &RgbImage, patch: usize, stride: usize) -> Result<DenseField, RenderError> {
    if patch == 0 || stride == 0 || patch > image.width().min(image.height()) {
        return Err(RenderError::InvalidGrid { patch, stride });
    }
    let cols = grid_count(image.width(), patch, stride);
    let rows = grid_count(image.height(), patch, stride);
    let field = GradientField::from_rgb(image, DENSE_SMOOTHING);
    let half = patch / 2;
    let mut data = vec![0.0f32; cols * rows * DESCRIPTOR_DIM];
    data.par_chunks_mut(cols * DESCRIPTOR_DIM).enumerate().for_each(|(j, row)| {
        for (i, out) in row.chunks_exact_mut(DESCRIPTOR_DIM).enumerate() {
            let c = nalgebra::Vector2::new((half + i * stride) as f64, (half + j * stride) as f64);
            field.describe_into(&c, patch, out);
        }
    });
    Ok(DenseField {
        patch,
        stride,
        cols,
        rows,
        data,
    })
}

/// Median; the mean of the two middle values for even counts.
pub fn median(values: &mut [f64]) -> Option<f64> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let (lower, m, _) = values.select_nth_unstable_by(n / 2, f64::total_cmp);
    let m = *m;
    if n % 2 == 1 {
        return Some(m);
    }
    let lower = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some(0.5 * (lower + m))
}

/// Compares against a precomputed query field. A cell is compared when its
/// center pixel is covered by the render and not movable.
pub fn compare_fields(
    query: &DenseField,
    synth_field: &DenseField,
    synth: &SyntheticView,
    movable: &BinaryMask,
    lambda: f64,
) -> Result<PhotometricScore, RenderError> {
    if query.cols != synth_field.cols || query.rows != synth_field.rows || !synth.coverage.same_size(movable) {
        return Err(RenderError::SizeMismatch);
    }
    let total = query.len();
    let mut dists = Vec::with_capacity(total);
    for j in 0..query.rows {
        for i in 0..query.cols {
            let (x, y) = query.center(i, j);
            if !*synth.coverage.get(x, y) || *movable.get(x, y) {
                continue;
            }
            let d2: f32 = query
                .cell(i, j)
                .iter()
                .zip(synth_field.cell(i, j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dists.push((d2 as f64).sqrt());
        }
    }
    let compared = dists.len();
    let Some(med) = median(&mut dists) else {
        return Err(RenderError::NoComparablePixels);
    };
    if compared < LOW_CONFIDENCE_CELLS {
        log::warn!("photometric score from only {compared} cells is low-confidence");
    }
    let compared_fraction = compared as f64 / total as f64;
    Ok(PhotometricScore {
        value: med + lambda * (1.0 - compared_fraction),
        median: med,
        compared_fraction,
    })
}

pub fn compare_views(
    query: &RgbImage,
    synth: &SyntheticView,
    movable: &BinaryMask,
    patch: usize,
    stride: usize,
    lambda: f64,
) -> Result<PhotometricScore, RenderError> {
    if !query.same_size(&synth.rgb) || !query.same_size(movable) {
        return Err(RenderError::SizeMismatch);
    }
    let qf = dense_descriptor_field(query, patch, stride)?;
    let sf = dense_descriptor_field(&synth.rgb, patch, stride)?;
    compare_fields(&qf, &sf, synth, movable, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Raster;
    use rand::{Rng, SeedableRng};

    fn noise(seed: u64, w: usize, h: usize) -> RgbImage {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let coarse: Vec<u8> = (0..(w / 4 + 2) * (h / 4 + 2)).map(|_| rng.random()).collect();
        Raster::from_fn(w, h, |x, y| {
            let v = coarse[(y / 4) * (w / 4 + 2) + x / 4];
            [v, v, v]
        })
    }

    fn full_view(rgb: &RgbImage) -> SyntheticView {
        SyntheticView {
            rgb: rgb.clone(),
            depth: Raster::new(rgb.width(), rgb.height(), 1.0),
            coverage: Raster::new(rgb.width(), rgb.height(), true),
        }
    }

    fn l2(a: &[f32], b: &[f32]) -> f64 {
        a.iter().zip(b).map(|(x, y)| ((x - y) * (x - y)) as f64).sum::<f64>().sqrt()
    }

    #[test]
    fn grid_geometry() {
        let f = dense_descriptor_field(&noise(0, 64, 40), 16, 4).unwrap();
        assert_eq!((f.cols, f.rows), (13, 7));
        assert_eq!(f.center(12, 6), (56, 32));
        assert!(dense_descriptor_field(&noise(0, 10, 10), 16, 4).is_err());
    }

    #[test]
    fn constant_image_gives_zero_descriptors() {
        let f = dense_descriptor_field(&Raster::new(48, 48, [90; 3]), 16, 4).unwrap();
        assert!(f.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn shift_is_closer_than_unrelated() {
        let a = noise(1, 96, 64);
        let shifted = Raster::from_fn(96, 64, |x, y| *a.get(x.saturating_sub(1), y));
        let b = noise(2, 96, 64);
        let fa = dense_descriptor_field(&a, 16, 4).unwrap();
        let fs = dense_descriptor_field(&shifted, 16, 4).unwrap();
        let fb = dense_descriptor_field(&b, 16, 4).unwrap();
        let med = |o: &DenseField| {
            let mut d: Vec<f64> = (0..fa.rows)
                .flat_map(|j| (0..fa.cols).map(move |i| (i, j)))
                .map(|(i, j)| l2(fa.cell(i, j), o.cell(i, j)))
                .collect();
            median(&mut d).unwrap()
        };
        let (ds, db) = (med(&fs), med(&fb));
        assert!(ds > 0.0 && ds < db, "{ds} {db}");
        assert_eq!(med(&fa), 0.0);
    }

    #[test]
    fn self_comparison_has_zero_median() {
        let a = noise(3, 64, 48);
        let s = compare_views(&a, &full_view(&a), &Raster::new(64, 48, false), 16, 4, 1.0).unwrap();
        assert_eq!(s.median, 0.0);
        assert_eq!(s.compared_fraction, 1.0);
        assert_eq!(s.value, 0.0);
        let other = compare_views(&a, &full_view(&noise(4, 64, 48)), &Raster::new(64, 48, false), 16, 4, 1.0).unwrap();
        assert!(other.value > s.value);
    }

    #[test]
    fn full_mask_has_nothing_to_compare() {
        let a = noise(5, 64, 48);
        let r = compare_views(&a, &full_view(&a), &Raster::new(64, 48, true), 16, 4, 1.0);
        assert!(matches!(r, Err(RenderError::NoComparablePixels)));
    }

    #[test]
    fn coverage_penalty() {
        let a = noise(6, 64, 48);
        let mut half = full_view(&a);
        for y in 0..48 {
            for x in 32..64 {
                half.coverage.set(x, y, false);
            }
        }
        let mask = Raster::new(64, 48, false);
        let s0 = compare_views(&a, &half, &mask, 16, 4, 0.0).unwrap();
        let s1 = compare_views(&a, &half, &mask, 16, 4, 1.0).unwrap();
        assert_eq!(s0.median, s1.median);
        assert!((s1.value - s0.value - (1.0 - s1.compared_fraction)).abs() < 1e-12);
        assert!(s1.compared_fraction < 1.0);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }
}
