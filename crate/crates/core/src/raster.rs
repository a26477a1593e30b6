//! Row-major image containers shared by every stage of the pipeline.
//!
//! Pixel `(x, y)` has its center at continuous image coordinate `(x, y)`:
//! origin top-left, x to the right, y down.

use nalgebra::Vector2;

#[derive(Clone, Debug, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

pub type RgbImage = Raster<[u8; 3]>;
pub type GrayImage = Raster<f32>;
/// Depth along the optical axis in map units; 0 marks an invalid sample.
pub type DepthMap = Raster<f32>;
pub type BinaryMask = Raster<bool>;
pub type LabelImage = Raster<u16>;

impl<T: Clone> Raster<T> {
    pub fn new(width: usize, height: usize, fill: T) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }
}

impl<T> Raster<T> {
    /// Wraps row-major `data`; `None` when the length does not match.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == width * height).then_some(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn same_size<U>(&self, other: &Raster<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Nearest pixel containing the continuous position, if inside the image.
    #[inline]
    pub fn pixel_at(&self, position: &Vector2<f64>) -> Option<(usize, usize)> {
        let x = position.x.round();
        let y = position.y.round();
        if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
            return None;
        }
        Some((x as usize, y as usize))
    }

    pub fn value_at(&self, position: &Vector2<f64>) -> Option<&T> {
        self.pixel_at(position).map(|(x, y)| self.get(x, y))
    }
}

/// Luma in `[0, 1]` (Rec. 601 weights).
pub fn to_gray(rgb: &RgbImage) -> GrayImage {
    rgb.map(|p| (0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32) / 255.0)
}

/// Separable Gaussian blur with edge clamping.
pub fn gaussian_blur(image: &GrayImage, sigma: f32) -> GrayImage {
    if sigma <= 0.0 {
        return image.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f32> = {
        let raw: Vec<f32> = (-radius..=radius)
            .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
            .collect();
        let sum: f32 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    };
    let (w, h) = (image.width() as isize, image.height() as isize);
    let src = image.data();
    let mut tmp = vec![0.0f32; src.len()];
    for y in 0..h {
        let row = &src[(y * w) as usize..((y + 1) * w) as usize];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let xx = (x + k as isize - radius).clamp(0, w - 1);
                acc += kv * row[xx as usize];
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let yy = (y + k as isize - radius).clamp(0, h - 1);
                acc += kv * tmp[(yy * w + x) as usize];
            }
            out[(y * w + x) as usize] = acc;
        }
    }
    Raster::from_vec(image.width(), image.height(), out).expect("same dimensions")
}

/// Central-difference gradients `(gx, gy)` with clamped borders.
pub fn gradients(image: &GrayImage) -> (GrayImage, GrayImage) {
    let (w, h) = (image.width(), image.height());
    let mut gx = Raster::new(w, h, 0.0f32);
    let mut gy = Raster::new(w, h, 0.0f32);
    if w == 0 || h == 0 {
        return (gx, gy);
    }
    for y in 0..h {
        for x in 0..w {
            let xl = x.saturating_sub(1);
            let xr = (x + 1).min(w - 1);
            let yu = y.saturating_sub(1);
            let yd = (y + 1).min(h - 1);
            let dx = (xr - xl).max(1) as f32;
            let dy = (yd - yu).max(1) as f32;
            gx.set(x, y, (image.get(xr, y) - image.get(xl, y)) / dx);
            gy.set(x, y, (image.get(x, yd) - image.get(x, yu)) / dy);
        }
    }
    (gx, gy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Raster::from_vec(2, 2, vec![0u8; 3]).is_none());
        assert!(Raster::from_vec(2, 2, vec![0u8; 4]).is_some());
    }

    #[test]
    fn pixel_at_rounds_and_bounds() {
        let r = Raster::new(4, 3, 0u8);
        assert_eq!(r.pixel_at(&Vector2::new(1.4, 1.6)), Some((1, 2)));
        assert_eq!(r.pixel_at(&Vector2::new(-0.6, 0.0)), None);
        assert_eq!(r.pixel_at(&Vector2::new(3.6, 0.0)), None);
    }

    #[test]
    fn blur_preserves_constant() {
        let img = Raster::new(9, 7, 0.5f32);
        let out = gaussian_blur(&img, 1.5);
        assert!(out.data().iter().all(|v| (v - 0.5).abs() < 1e-6));
    }

    #[test]
    fn gradient_of_ramp() {
        let img = Raster::from_fn(8, 8, |x, _| x as f32);
        let (gx, gy) = gradients(&img);
        assert!((gx.get(4, 4) - 1.0).abs() < 1e-6);
        assert!(gy.get(4, 4).abs() < 1e-6);
    }
}
