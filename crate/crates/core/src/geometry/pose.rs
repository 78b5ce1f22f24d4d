use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rigid transform `x' = R x + t`. Relative poses map camera-0 coordinates
/// into camera-1 coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

const ORTHO_TOL: f64 = 1e-9;

fn is_rotation(r: &Matrix3<f64>) -> bool {
    (r.transpose() * r - Matrix3::identity()).abs().max() <= ORTHO_TOL
        && (r.determinant() - 1.0).abs() <= ORTHO_TOL
}

/// Closest rotation in the Frobenius sense.
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !is_rotation(&rotation) {
            return Err(Error::InvalidArgument("matrix is not a rotation".into()));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("non-finite translation".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Projects `rotation` onto SO(3) before constructing.
    pub fn from_approx(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: orthonormalize(&rotation),
            translation,
        }
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Parses 12 row-major floats of a 3x4 `[R | t]` matrix.
    pub fn from_row_major_3x4(v: &[f64]) -> Result<Self> {
        if v.len() != 12 {
            return Err(Error::Parse(format!("expected 12 values, got {}", v.len())));
        }
        let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let t = Vector3::new(v[3], v[7], v[11]);
        // files carry limited precision
        let closest = orthonormalize(&r);
        if (closest - r).abs().max() > 1e-4 {
            return Err(Error::Parse("pose rotation block is not orthonormal".into()));
        }
        Self::new(closest, t)
    }

    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let (r, t) = (&self.rotation, &self.translation);
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        ]
    }

    #[inline]
    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    #[inline]
    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    #[inline]
    pub fn transform(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        Self::from_approx(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    /// Relative pose mapping camera-`a` coordinates into camera-`b`
    /// coordinates, from two camera-to-world poses.
    pub fn relative(cam_a_to_world: &Pose, cam_b_to_world: &Pose) -> Self {
        cam_b_to_world.inverse().compose(cam_a_to_world)
    }

    /// Left-multiplies by `exp(omega)` and adds `delta_t`.
    pub(crate) fn perturbed(&self, omega: &Vector3<f64>, delta_t: &Vector3<f64>) -> Self {
        let dr = Rotation3::new(*omega).into_inner();
        Self::from_approx(dr * self.rotation, dr * self.translation + delta_t)
    }
}

/// Geodesic rotation angle of a rotation matrix, in radians.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let s = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    )
    .norm()
        * 0.5;
    let c = (r.trace() - 1.0) * 0.5;
    s.atan2(c)
}

/// Rotation error in degrees and translation error in meters.
pub fn pose_errors(estimate: &Pose, ground_truth: &Pose) -> (f64, f64) {
    let dr = estimate.rotation * ground_truth.rotation.transpose();
    let e_r = rotation_angle(&dr).to_degrees();
    let e_t = (estimate.translation - ground_truth.translation).norm();
    (e_r, e_t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let axis = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        let r = Rotation3::new(axis * 5.0).into_inner();
        Pose::new(r, Vector3::new(rng.random(), rng.random(), rng.random())).unwrap()
    }

    #[test]
    fn identical_and_rotated() {
        let p = Pose::new(Matrix3::identity(), Vector3::new(1.0, 2.0, 3.0)).unwrap();
        assert_eq!(pose_errors(&p, &p), (0.0, 0.0));
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), 10f64.to_radians());
        let q = Pose::new(rz.into_inner(), *p.translation()).unwrap();
        let (er, et) = pose_errors(&q, &p);
        assert!((er - 10.0).abs() < 1e-12);
        assert_eq!(et, 0.0);
    }

    #[test]
    fn matches_quaternion_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let qa = UnitQuaternion::from_matrix(a.rotation());
            let qb = UnitQuaternion::from_matrix(b.rotation());
            let d = qa * qb.inverse();
            let oracle = 2.0 * d.imag().norm().atan2(d.w.abs());
            let (er, _) = pose_errors(&a, &b);
            assert!((er.to_radians() - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn relative_pose_convention() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c0 = random_pose(&mut rng);
        let c1 = random_pose(&mut rng);
        let rel = Pose::relative(&c0, &c1);
        let x0 = Vector3::new(0.3, -0.1, 2.0);
        let world = c0.transform(&x0);
        let x1 = c1.inverse().transform(&world);
        assert!((rel.transform(&x0) - x1).norm() < 1e-12);
        assert!(is_rotation(rel.rotation()));
    }

    #[test]
    fn row_major_round_trip_and_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_pose(&mut rng);
        let back = Pose::from_row_major_3x4(&p.to_row_major_3x4()).unwrap();
        assert!(pose_errors(&p, &back).0 < 1e-9);
        assert!(Pose::from_row_major_3x4(&[0.0; 11]).is_err());
        assert!(Pose::from_row_major_3x4(&[2.0; 12]).is_err());
        assert!(Pose::new(Matrix3::identity() * 2.0, Vector3::zeros()).is_err());
    }
}
