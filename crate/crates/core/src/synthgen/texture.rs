//! Procedural surface appearance.

use nalgebra::Vector3;

/// How a face is colored; texture coordinates derive from world position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Material {
    /// Planar texture over two world axes, anchored at `origin`.
    Planar {
        seed: u64,
        axes: [usize; 2],
        origin: [f64; 3],
        shade: f32,
    },
    /// Texture wrapped around a vertical axis through `(x, z)`.
    Cylindrical { seed: u64, axis: [f64; 2], radius: f64, shade: f32 },
    Plain { color: [u8; 3], shade: f32 },
}

fn mix(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^ (h >> 33)
}

/// Uniform in [0, 1) from a lattice point.
fn lattice(seed: u64, x: i64, y: i64) -> f32 {
    let h = mix(seed ^ mix((x as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (y as u64).wrapping_mul(0x632b_e59b_d9b4_e019)));
    (h >> 40) as f32 / (1u64 << 24) as f32
}

fn value_noise(seed: u64, s: f64, t: f64) -> f32 {
    let (fs, ft) = (s.floor(), t.floor());
    let (x, y) = (fs as i64, ft as i64);
    let smooth = |v: f64| (v * v * (3.0 - 2.0 * v)) as f32;
    let (a, b) = (smooth(s - fs), smooth(t - ft));
    let v00 = lattice(seed, x, y);
    let v10 = lattice(seed, x + 1, y);
    let v01 = lattice(seed, x, y + 1);
    let v11 = lattice(seed, x + 1, y + 1);
    (v00 * (1.0 - a) + v10 * a) * (1.0 - b) + (v01 * (1.0 - a) + v11 * a) * b
}

/// Seed-dependent base color, kept away from black and white.
pub fn base_color(seed: u64) -> [f32; 3] {
    let h = mix(seed.wrapping_add(0x5bd1_e995));
    [0, 1, 2].map(|k| 0.45 + 0.5 * ((h >> (k * 16)) & 0xffff) as f32 / 65535.0)
}

/// Random cells of 0.2 units with sharp borders, plus three noise octaves.
pub fn pattern(seed: u64, s: f64, t: f64) -> [u8; 3] {
    const CELL: f64 = 0.2;
    let cell = lattice(seed ^ 0xa5a5, (s / CELL).floor() as i64, (t / CELL).floor() as i64);
    let n1 = value_noise(seed ^ 1, s / 0.6, t / 0.6);
    let n2 = value_noise(seed ^ 2, s / 0.15, t / 0.15);
    let n3 = value_noise(seed ^ 3, s / 0.06, t / 0.06);
    let b = 0.4 * cell + 0.25 * n1 + 0.2 * n2 + 0.15 * n3;
    let base = base_color(seed);
    base.map(|c| (c * (0.15 + 1.3 * b) * 255.0).clamp(0.0, 255.0) as u8)
}

/// Lambertian-style factor for a fixed light direction.
pub fn shade_for(normal: &Vector3<f64>) -> f32 {
    let light = Vector3::new(0.3, 0.8, 0.5).normalize();
    (0.75 + 0.25 * normal.dot(&light)) as f32
}

impl Material {
    /// The same appearance carried along a horizontal translation.
    pub fn translated(&self, dx: f64, dz: f64) -> Self {
        match *self {
            Material::Planar {
                seed,
                axes,
                origin,
                shade,
            } => Material::Planar {
                seed,
                axes,
                origin: [origin[0] + dx, origin[1], origin[2] + dz],
                shade,
            },
            Material::Cylindrical {
                seed,
                axis,
                radius,
                shade,
            } => Material::Cylindrical {
                seed,
                axis: [axis[0] + dx, axis[1] + dz],
                radius,
                shade,
            },
            m @ Material::Plain { .. } => m,
        }
    }

    pub fn color_at(&self, p: &Vector3<f64>) -> [u8; 3] {
        let (raw, shade) = match *self {
            Material::Planar {
                seed,
                axes,
                origin,
                shade,
            } => (pattern(seed, p[axes[0]] - origin[axes[0]], p[axes[1]] - origin[axes[1]]), shade),
            Material::Cylindrical {
                seed,
                axis,
                radius,
                shade,
            } => {
                let angle = (p.z - axis[1]).atan2(p.x - axis[0]);
                (pattern(seed, angle * radius, p.y), shade)
            }
            Material::Plain { color, shade } => (color, shade),
        };
        raw.map(|c| (c as f32 * shade).round().clamp(0.0, 255.0) as u8)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pattern_is_deterministic_and_varied() {
        let a = pattern(7, 1.23, 4.56);
        assert_eq!(a, pattern(7, 1.23, 4.56));
        let distinct: std::collections::BTreeSet<[u8; 3]> =
            (0..100).map(|i| pattern(7, i as f64 * 0.13, 0.5)).collect();
        assert!(distinct.len() > 50);
    }

    #[test]
    fn plain_ignores_position() {
        let m = Material::Plain {
            color: [100, 50, 20],
            shade: 1.0,
        };
        assert_eq!(m.color_at(&Vector3::new(1.0, 2.0, 3.0)), m.color_at(&Vector3::zeros()));
    }
}
