//! Three-point absolute pose (Grunert's resection).
//!
//! The distances `s1, s2, s3` from the camera center to the three world points
//! are written as `s2 = u s1`, `s3 = v s1`. The law of cosines on the three
//! triangle sides eliminates `u` and leaves a quartic in `v`; each admissible
//! root yields the camera-frame points, and the pose follows from aligning
//! them with the world points.

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::pose::orthonormalize;
use crate::geometry::Pose;

/// Angular residual every returned pose must meet on all three points.
pub const P3P_RESIDUAL_TOL: f64 = 1e-8;
const MIN_TRIANGLE_AREA: f64 = 1e-9;

// Polynomials are stored lowest degree first.
fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_add(a: &[f64], b: &[f64], scale_b: f64) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, x) in a.iter().enumerate() {
        out[i] += x;
    }
    for (i, y) in b.iter().enumerate() {
        out[i] += scale_b * y;
    }
    out
}

fn poly_eval(p: &[f64], x: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn poly_deriv(p: &[f64]) -> Vec<f64> {
    p.iter().enumerate().skip(1).map(|(i, c)| i as f64 * c).collect()
}

/// Real roots of a polynomial via companion-matrix eigenvalues, polished
/// with Newton steps.
pub(crate) fn real_roots(p: &[f64]) -> Vec<f64> {
    let scale = p.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return vec![];
    }
    let mut deg = p.len() - 1;
    while deg > 0 && p[deg].abs() <= 1e-13 * scale {
        deg -= 1;
    }
    if deg == 0 {
        return vec![];
    }
    let lead = p[deg];
    let mut companion = DMatrix::<f64>::zeros(deg, deg);
    for i in 1..deg {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        companion[(i, deg - 1)] = -p[i] / lead;
    }
    let dp = poly_deriv(&p[..=deg]);
    let mut roots = Vec::new();
    for z in companion.complex_eigenvalues().iter() {
        if z.im.abs() > 1e-4 * (1.0 + z.re.abs()) {
            continue;
        }
        let mut x = z.re;
        let mut fx = poly_eval(&p[..=deg], x).abs();
        for _ in 0..8 {
            let d = poly_eval(&dp, x);
            let step = poly_eval(&p[..=deg], x) / d;
            if !step.is_finite() {
                break;
            }
            // near multiple roots the derivative vanishes; only accept
            // steps that reduce the residual
            let next = x - step;
            let fn_ = poly_eval(&p[..=deg], next).abs();
            if fn_ >= fx {
                break;
            }
            x = next;
            fx = fn_;
        }
        if x.is_finite() {
            roots.push(x);
        }
    }
    roots
}

fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Newton iterations on the three law-of-cosines equations.
fn refine_distances(s: &mut [f64; 3], cos: [f64; 3], sides2: [f64; 3]) {
    let [ca, cb, cg] = cos;
    let [a2, b2, c2] = sides2;
    for _ in 0..6 {
        let [s1, s2, s3] = *s;
        let f = Vector3::new(
            s2 * s2 + s3 * s3 - 2.0 * s2 * s3 * ca - a2,
            s1 * s1 + s3 * s3 - 2.0 * s1 * s3 * cb - b2,
            s1 * s1 + s2 * s2 - 2.0 * s1 * s2 * cg - c2,
        );
        let j = Matrix3::new(
            0.0,
            2.0 * (s2 - s3 * ca),
            2.0 * (s3 - s2 * ca),
            2.0 * (s1 - s3 * cb),
            0.0,
            2.0 * (s3 - s1 * cb),
            2.0 * (s1 - s2 * cg),
            2.0 * (s2 - s1 * cg),
            0.0,
        );
        let Some(step) = j.lu().solve(&f) else { return };
        if !step.iter().all(|v| v.is_finite()) {
            return;
        }
        s[0] -= step.x;
        s[1] -= step.y;
        s[2] -= step.z;
        if step.norm() <= 1e-15 * (s[0].abs() + s[1].abs() + s[2].abs()) {
            return;
        }
    }
}

/// Rigid alignment `cam_i = R world_i + t` of two point triples.
fn align(world: &[Vector3<f64>; 3], cam: &[Vector3<f64>; 3]) -> Pose {
    let wc = (world[0] + world[1] + world[2]) / 3.0;
    let cc = (cam[0] + cam[1] + cam[2]) / 3.0;
    let mut h = Matrix3::zeros();
    for i in 0..3 {
        h += (world[i] - wc) * (cam[i] - cc).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v) = (svd.u.unwrap(), svd.v_t.unwrap().transpose());
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = orthonormalize(&(v * d * u.transpose()));
    let t = cc - r * wc;
    Pose::from_approx(r, t)
}

/// All poses (up to four) placing the three world points on the three
/// bearing rays in front of the camera.
pub fn p3p_solve(bearings: &[Vector3<f64>; 3], worlds: &[Vector3<f64>; 3]) -> Result<Vec<Pose>> {
    let mut f = *bearings;
    for b in f.iter_mut() {
        let n = b.norm();
        if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("bearing norm {n} is not 1")));
        }
        *b /= n;
    }
    let area = 0.5 * (worlds[1] - worlds[0]).cross(&(worlds[2] - worlds[0])).norm();
    if !(area > MIN_TRIANGLE_AREA) {
        return Err(Error::Degenerate(format!(
            "world points are collinear (triangle area {area:e})"
        )));
    }
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        if f[i].cross(&f[j]).norm() < 1e-12 {
            return Err(Error::Degenerate("coincident bearings".into()));
        }
    }

    let a2 = (worlds[1] - worlds[2]).norm_squared();
    let b2 = (worlds[0] - worlds[2]).norm_squared();
    let c2 = (worlds[0] - worlds[1]).norm_squared();
    let ca = f[1].dot(&f[2]);
    let cb = f[0].dot(&f[2]);
    let cg = f[0].dot(&f[1]);

    // u = N(v) / D(v), substituted into the (s1, s2) side equation.
    let k = (a2 - c2) / b2;
    let n = [1.0 + k, -2.0 * k * cb, k - 1.0];
    let d = [2.0 * cg, -2.0 * ca];
    let q = [1.0, -2.0 * cb, 1.0];
    let nn = poly_mul(&n, &n);
    let nd = poly_mul(&n, &d);
    let dd = poly_mul(&d, &d);
    let ddq = poly_mul(&dd, &q);
    let quartic = poly_add(&poly_add(&poly_add(&nn, &nd, -2.0 * cg), &dd, 1.0), &ddq, -c2 / b2);

    let mut poses: Vec<Pose> = Vec::new();
    for v in real_roots(&quartic) {
        if v <= 0.0 {
            continue;
        }
        let qv = poly_eval(&q, v);
        if qv <= 0.0 {
            continue;
        }
        let s1 = (b2 / qv).sqrt();
        let dv = poly_eval(&d, v);
        // When D(v) vanishes, u is undetermined by the quotient; recover s2
        // from the (s1, s2) side equation instead.
        let s2_candidates: Vec<f64> = if dv.abs() > 1e-8 {
            vec![poly_eval(&n, v) / dv * s1]
        } else {
            let disc = c2 - s1 * s1 * (1.0 - cg * cg);
            if disc < -1e-9 * c2 {
                continue;
            }
            let r = disc.max(0.0).sqrt();
            vec![s1 * cg + r, s1 * cg - r]
        };
        for s2 in s2_candidates {
            if s2 <= 0.0 {
                continue;
            }
            let mut s = [s1, s2, v * s1];
            refine_distances(&mut s, [ca, cb, cg], [a2, b2, c2]);
            if s.iter().any(|x| !(*x > 0.0)) {
                continue;
            }
            let cam = [f[0] * s[0], f[1] * s[1], f[2] * s[2]];
            let pose = align(worlds, &cam);
            let ok = (0..3).all(|i| {
                let pc = pose.transform(&worlds[i]);
                pc.z > 0.0 && angle_between(&pc, &f[i]) <= P3P_RESIDUAL_TOL
            });
            let duplicate = poses.iter().any(|p| {
                (p.rotation() - pose.rotation()).abs().max() < 1e-9
                    && (p.translation() - pose.translation()).norm() < 1e-9
            });
            if ok && !duplicate {
                poses.push(pose);
            }
        }
    }
    Ok(poses)
}
