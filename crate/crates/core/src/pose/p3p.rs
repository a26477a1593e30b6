//! Perspective-three-point solver (Lambda Twist formulation) in f64.

use nalgebra::{Matrix3, Vector3};

/// Solutions `(R, t)` of `λᵢ fᵢ = R xᵢ + t` for unit bearings `fᵢ`.
/// Returns `None` for collinear world points.
pub fn solve(world: &[Vector3<f64>; 3], bearings: &[Vector3<f64>; 3]) -> Option<Vec<(Matrix3<f64>, Vector3<f64>)>> {
    let [x1, x2, x3] = *world;
    let f1 = bearings[0].normalize();
    let f2 = bearings[1].normalize();
    let f3 = bearings[2].normalize();

    let d12 = x1 - x2;
    let d13 = x1 - x3;
    let d23 = x2 - x3;
    let n = d12.cross(&d13);
    if n.norm() <= 1e-10 * d12.norm() * d13.norm() || d12.norm() == 0.0 || d13.norm() == 0.0 {
        return None;
    }

    let a12 = d12.norm_squared();
    let a13 = d13.norm_squared();
    let a23 = d23.norm_squared();
    let c12 = f1.dot(&f2);
    let c23 = f2.dot(&f3);
    let c31 = f3.dot(&f1);
    let blob = c12 * c23 * c31 - 1.0;
    let s12 = 1.0 - c12 * c12;
    let s23 = 1.0 - c23 * c23;
    let s31 = 1.0 - c31 * c31;
    let b12 = -2.0 * c12;
    let b13 = -2.0 * c31;
    let b23 = -2.0 * c23;

    let p3 = a13 * (a23 * s31 - a13 * s23);
    let p2 = 2.0 * blob * a23 * a13 + a13 * (2.0 * a12 + a13) * s23 + a23 * (a23 - a12) * s31;
    let p1 = a23 * (a13 - a23) * s12 - a12 * a12 * s23 - 2.0 * a12 * (blob * a23 + a13 * s23);
    let p0 = a12 * (a12 * s23 - a23 * s12);

    // Falls back to the quadratic when the cubic term vanishes.
    let g = if p3.abs() > 1e-14 * (p0.abs() + p1.abs() + p2.abs() + p3.abs()) {
        cubic_root(p2 / p3, p1 / p3, p0 / p3)
    } else if p2.abs() > 0.0 {
        // Quadratic p2 g² + p1 g + p0.
        match quadratic_roots(p1 / p2, p0 / p2) {
            Some((r1, _)) => r1,
            None => return Some(Vec::new()),
        }
    } else {
        return Some(Vec::new());
    };

    let d0 = Matrix3::new(
        a23 * (1.0 - g),
        -(a23 * c12),
        a23 * c31 * g,
        -(a23 * c12),
        a23 - a12 + a13 * g,
        -c23 * (a13 * g - a12),
        a23 * c31 * g,
        -c23 * (a13 * g - a12),
        g * (a13 - a23) - a12,
    );
    let (ev, evals) = eigen_singular(&d0);

    let mut lambdas: Vec<Vector3<f64>> = Vec::with_capacity(4);
    let ratio = (-evals[1] / evals[0]).max(0.0).sqrt();
    for s in [ratio, -ratio] {
        let w2 = 1.0 / (s * ev[(0, 1)] - ev[(0, 0)]);
        let w0 = w2 * (ev[(1, 0)] - s * ev[(1, 1)]);
        let w1 = w2 * (ev[(2, 0)] - s * ev[(2, 1)]);
        let a = 1.0 / ((a13 - a12) * w1 * w1 - a12 * b13 * w1 - a12);
        let b = a * (a13 * b12 * w1 - a12 * b13 * w0 - 2.0 * w0 * w1 * (a12 - a13));
        let c = a * ((a13 - a12) * w0 * w0 + a13 * b12 * w0 + a13);
        if !(a.is_finite() && b.is_finite() && c.is_finite()) {
            continue;
        }
        let Some((t1, t2)) = quadratic_roots(b, c) else {
            continue;
        };
        for tau in [t1, t2] {
            if !(tau > 0.0) {
                continue;
            }
            let d = a23 / (tau * (b23 + tau) + 1.0);
            if !(d > 0.0) {
                continue;
            }
            let l2 = d.sqrt();
            let l3 = tau * l2;
            let l1 = w0 * l2 + w1 * l3;
            if l1 >= 0.0 {
                lambdas.push(Vector3::new(l1, l2, l3));
            }
        }
    }

    let xm = Matrix3::from_columns(&[d12, d13, n]);
    let xm_inv = xm.try_inverse()?;
    let mut out: Vec<(Matrix3<f64>, Vector3<f64>)> = Vec::with_capacity(4);
    for l in lambdas {
        let l = refine_lambda(l, a12, a13, a23, b12, b13, b23);
        if !(l.x > 0.0 && l.y > 0.0 && l.z > 0.0) {
            continue;
        }
        let y1 = l.x * f1;
        let y2 = l.y * f2;
        let y3 = l.z * f3;
        let e1 = y1 - y2;
        let e2 = y1 - y3;
        let ym = Matrix3::from_columns(&[e1, e2, e1.cross(&e2)]);
        let r = ym * xm_inv;
        let t = y1 - r * x1;
        if !(r.iter().all(|v| v.is_finite()) && t.iter().all(|v| v.is_finite())) {
            continue;
        }
        let duplicate = out
            .iter()
            .any(|(r0, t0)| (r0 - r).abs().max() < 1e-9 && (t0 - t).norm() < 1e-9 * (1.0 + t.norm()));
        if !duplicate {
            out.push((r, t));
        }
    }
    Some(out)
}

fn quadratic_roots(b: f64, c: f64) -> Option<(f64, f64)> {
    let disc = b * b - 4.0 * c;
    if disc < 0.0 {
        return None;
    }
    let y = disc.sqrt();
    // Numerically stable pair.
    Some(if b < 0.0 {
        (0.5 * (-b + y), 2.0 * c / (-b + y))
    } else if b > 0.0 || y > 0.0 {
        (2.0 * c / (-b - y), 0.5 * (-b - y))
    } else {
        (0.0, 0.0)
    })
}

/// One real root of `r³ + b r² + c r + d`, chosen where the derivative is large.
fn cubic_root(b: f64, c: f64, d: f64) -> f64 {
    let h = |r: f64| ((r + b) * r + c) * r + d;
    let dh = |r: f64| (3.0 * r + 2.0 * b) * r + c;
    let mut r0;
    if b * b >= 3.0 * c {
        let v = (b * b - 3.0 * c).sqrt();
        let t1 = (-b - v) / 3.0;
        let k = h(t1);
        if k > 0.0 {
            r0 = t1 - (-k / (3.0 * t1 + b)).sqrt();
        } else {
            let t2 = (-b + v) / 3.0;
            let k2 = h(t2);
            r0 = t2 + (-k2 / (3.0 * t2 + b)).sqrt();
        }
    } else {
        r0 = -b / 3.0;
        if dh(r0).abs() < 1e-4 {
            r0 += 1.0;
        }
    }
    if !r0.is_finite() {
        r0 = -b / 3.0;
    }
    for i in 0..50 {
        let fx = h(r0);
        if i >= 7 && fx.abs() <= 1e-15 {
            break;
        }
        let fpx = dh(r0);
        if fpx == 0.0 {
            break;
        }
        r0 -= fx / fpx;
    }
    r0
}

/// Eigen-decomposition of a symmetric matrix known to have a zero eigenvalue.
/// Columns 0 and 1 hold eigenvectors for the two nonzero eigenvalues, with
/// |e0| ≥ |e1|.
fn eigen_singular(x: &Matrix3<f64>) -> (Matrix3<f64>, [f64; 2]) {
    let v3 = x.column(1).cross(&x.column(2));
    let v3 = if v3.norm() > 0.0 { v3.normalize() } else { Vector3::z() };
    let (m11, m12, m13) = (x[(0, 0)], x[(0, 1)], x[(0, 2)]);
    let (m22, m23, m33) = (x[(1, 1)], x[(1, 2)], x[(2, 2)]);
    let x12_sqr = m12 * m12;
    let b = -m11 - m22 - m33;
    let c = -x12_sqr - m13 * m13 - m23 * m23 + m11 * (m22 + m33) + m22 * m33;
    let (mut e1, mut e2) = match quadratic_roots(b, c) {
        Some(r) => r,
        None => (-0.5 * b, -0.5 * b),
    };
    if e1.abs() < e2.abs() {
        std::mem::swap(&mut e1, &mut e2);
    }
    let mx0011 = -m11 * m22;
    let prec0 = m12 * m23 - m13 * m22;
    let prec1 = m12 * m13 - m11 * m23;
    let vec_for = |e: f64| {
        let tmp = 1.0 / (e * (m11 + m22) + mx0011 - e * e + x12_sqr);
        let a1 = -(e * m13 + prec0) * tmp;
        let a2 = -(e * m23 + prec1) * tmp;
        let rn = 1.0 / (a1 * a1 + a2 * a2 + 1.0).sqrt();
        Vector3::new(a1 * rn, a2 * rn, rn)
    };
    let v1 = vec_for(e1);
    let v2 = vec_for(e2);
    (Matrix3::from_columns(&[v1, v2, v3]), [e1, e2])
}

fn refine_lambda(lambda: Vector3<f64>, a12: f64, a13: f64, a23: f64, b12: f64, b13: f64, b23: f64) -> Vector3<f64> {
    let residual = |l: &Vector3<f64>| {
        Vector3::new(
            l.x * l.x + l.y * l.y + b12 * l.x * l.y - a12,
            l.x * l.x + l.z * l.z + b13 * l.x * l.z - a13,
            l.y * l.y + l.z * l.z + b23 * l.y * l.z - a23,
        )
    };
    let l1norm = |v: &Vector3<f64>| v.x.abs() + v.y.abs() + v.z.abs();
    let mut l = lambda;
    let mut r = residual(&l);
    for _ in 0..10 {
        if l1norm(&r) < 1e-15 * (a12 + a13 + a23) {
            break;
        }
        let j = Matrix3::new(
            2.0 * l.x + b12 * l.y,
            2.0 * l.y + b12 * l.x,
            0.0,
            2.0 * l.x + b13 * l.z,
            0.0,
            2.0 * l.z + b13 * l.x,
            0.0,
            2.0 * l.y + b23 * l.z,
            2.0 * l.z + b23 * l.y,
        );
        let Some(ji) = j.try_inverse() else {
            break;
        };
        let ln = l - ji * r;
        let rn = residual(&ln);
        if l1norm(&rn) >= l1norm(&r) {
            break;
        }
        l = ln;
        r = rn;
    }
    l
}
