//! Global image descriptors and top-k retrieval by dot product.

use thiserror::Error;

use crate::raster::{gaussian_blur, gradients, to_gray, RgbImage};

const GRID: usize = 4;
const COLOR_BINS: usize = 8;
const ORIENT_BINS: usize = 8;
pub const BUILTIN_DIM: usize = GRID * GRID * (3 * COLOR_BINS + ORIENT_BINS);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("descriptor length {found} does not match index length {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("retrieval index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("descriptor has zero norm")]
    ZeroDescriptor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DescriptorSource {
    Builtin,
    Ingested,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalDescriptor {
    vector: Vec<f32>,
    pub source: DescriptorSource,
}

impl GlobalDescriptor {
    /// Normalizes `values`; zero vectors are rejected.
    pub fn ingested(values: Vec<f32>) -> Result<Self, RetrievalError> {
        let v = l2_normalized(values).ok_or(RetrievalError::ZeroDescriptor)?;
        Ok(Self {
            vector: v,
            source: DescriptorSource::Ingested,
        })
    }

    pub fn vector(&self) -> &[f32] {
        &self.vector
    }

    pub fn dot(&self, other: &GlobalDescriptor) -> f32 {
        // f64 accumulation keeps rankings stable across equal-content inputs.
        self.vector
            .iter()
            .zip(&other.vector)
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum::<f64>() as f32
    }
}

fn l2_normalized(mut v: Vec<f32>) -> Option<Vec<f32>> {
    let n = v.iter().map(|x| *x as f64 * *x as f64).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x = (*x as f64 / n) as f32);
    Some(v)
}

/// Grid color histograms (8 bins per channel) followed by grid gradient
/// orientation histograms; each half L2-normalized, then the whole vector.
pub fn describe(image: &RgbImage) -> GlobalDescriptor {
    let (w, h) = (image.width(), image.height());
    let mut color = vec![0.0f32; GRID * GRID * 3 * COLOR_BINS];
    let mut orient = vec![0.0f32; GRID * GRID * ORIENT_BINS];
    let cell_of = |x: usize, y: usize| ((y * GRID / h.max(1)) * GRID + x * GRID / w.max(1)).min(GRID * GRID - 1);
    for y in 0..h {
        for x in 0..w {
            let c = cell_of(x, y);
            let p = image.get(x, y);
            for ch in 0..3 {
                let bin = p[ch] as usize * COLOR_BINS / 256;
                color[(c * 3 + ch) * COLOR_BINS + bin] += 1.0;
            }
        }
    }
    let (gx, gy) = gradients(&gaussian_blur(&to_gray(image), 1.0));
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (*gx.get(x, y), *gy.get(x, y));
            let mag = (dx * dx + dy * dy).sqrt();
            if mag < 1e-6 {
                continue;
            }
            let angle = dy.atan2(dx).rem_euclid(std::f32::consts::TAU);
            let bin = ((angle / std::f32::consts::TAU * ORIENT_BINS as f32) as usize).min(ORIENT_BINS - 1);
            orient[cell_of(x, y) * ORIENT_BINS + bin] += mag;
        }
    }
    let mut vector = l2_normalized(color).unwrap_or_else(|| vec![0.0; GRID * GRID * 3 * COLOR_BINS]);
    vector.extend(l2_normalized(orient).unwrap_or_else(|| vec![0.0; GRID * GRID * ORIENT_BINS]));
    let vector = l2_normalized(vector).unwrap_or_else(|| {
        let mut v = vec![0.0; BUILTIN_DIM];
        v[0] = 1.0;
        v
    });
    GlobalDescriptor {
        vector,
        source: DescriptorSource::Builtin,
    }
}

/// Ids of the `k` highest dot products, descending, ties by ascending id.
pub fn find_closest_images<'a>(
    query: &GlobalDescriptor,
    index: &'a [(String, GlobalDescriptor)],
    k: usize,
) -> Result<Vec<&'a str>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    if index.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    let mut scored = Vec::with_capacity(index.len());
    for (id, d) in index {
        if d.vector.len() != query.vector.len() {
            return Err(RetrievalError::DimensionMismatch {
                expected: query.vector.len(),
                found: d.vector.len(),
            });
        }
        scored.push((query.dot(d), id.as_str()));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    Ok(scored.into_iter().take(k).map(|(_, id)| id).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Raster;

    fn pattern() -> RgbImage {
        Raster::from_fn(64, 48, |x, y| [(x * 4) as u8, (y * 5) as u8, ((x * y) % 256) as u8])
    }

    #[test]
    fn uniform_gray_descriptor() {
        let img = Raster::new(32, 32, [128u8, 128, 128]);
        let d = describe(&img);
        let v = d.vector();
        assert_eq!(v.len(), BUILTIN_DIM);
        assert!(v[GRID * GRID * 3 * COLOR_BINS..].iter().all(|x| *x == 0.0));
        for c in 0..GRID * GRID * 3 {
            let nonzero = v[c * COLOR_BINS..(c + 1) * COLOR_BINS].iter().filter(|x| **x > 0.0).count();
            assert_eq!(nonzero, 1);
        }
    }

    #[test]
    fn self_similarity_and_rotation() {
        let a = pattern();
        let da = describe(&a);
        assert!((da.dot(&describe(&a.clone())) - 1.0).abs() < 1e-6);
        let rot = Raster::from_fn(48, 64, |x, y| *a.get(y, 47 - x));
        assert!(da.dot(&describe(&rot)) < 1.0 - 1e-4);
    }

    #[test]
    fn k_larger_than_index_returns_all_sorted() {
        let q = GlobalDescriptor::ingested(vec![1.0, 0.0]).unwrap();
        let idx = vec![
            ("b".to_string(), GlobalDescriptor::ingested(vec![0.0, 1.0]).unwrap()),
            ("a".to_string(), GlobalDescriptor::ingested(vec![1.0, 1.0]).unwrap()),
            ("c".to_string(), GlobalDescriptor::ingested(vec![1.0, 0.0]).unwrap()),
        ];
        assert_eq!(find_closest_images(&q, &idx, 10).unwrap(), vec!["c", "a", "b"]);
        let bad = vec![("x".to_string(), GlobalDescriptor::ingested(vec![1.0, 0.0, 0.0]).unwrap())];
        assert!(matches!(
            find_closest_images(&q, &bad, 1),
            Err(RetrievalError::DimensionMismatch { .. })
        ));
    }
}
