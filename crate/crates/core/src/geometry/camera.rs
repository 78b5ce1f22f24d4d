use nalgebra::{Point2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Minimum camera-frame depth for a point to be projectable.
pub const MIN_DEPTH: f64 = 1e-6;

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "intrinsics require fx, fy > 0 (fx={fx}, fy={fy})"
            )));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// Projects a camera-frame point; `None` when it is not in front of the camera.
    #[inline]
    pub fn project_camera(&self, p: &Vector3<f64>) -> Option<Point2<f64>> {
        if p.z <= MIN_DEPTH {
            return None;
        }
        Some(Point2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Unit bearing vector through a pixel.
    pub fn bearing(&self, pixel: Point2<f64>) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.cx) / self.fx,
            (pixel.y - self.cy) / self.fy,
            1.0,
        )
        .normalize()
    }
}

/// Transforms `x` with `pose` and projects it.
pub fn project(pose: &Pose, k: &CameraIntrinsics, x: &Vector3<f64>) -> Result<Point2<f64>> {
    let pc = pose.transform(x);
    k.project_camera(&pc).ok_or_else(|| {
        Error::Degenerate(format!("point at camera depth {} is not projectable", pc.z))
    })
}

/// Camera-frame point at `depth` along the ray through `pixel`.
pub fn backproject(k: &CameraIntrinsics, pixel: Point2<f64>, depth: f64) -> Result<Vector3<f64>> {
    if !(depth > 0.0) {
        return Err(Error::InvalidArgument(format!("depth must be positive, got {depth}")));
    }
    Ok(Vector3::new(
        depth * (pixel.x - k.cx) / k.fx,
        depth * (pixel.y - k.cy) / k.fy,
        depth,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0).unwrap()
    }

    #[test]
    fn on_axis_and_offset_points() {
        let id = Pose::identity();
        let p = project(&id, &k(), &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!((p.x, p.y), (50.0, 50.0));
        let p = project(&id, &k(), &Vector3::new(1.0, 0.0, 1.0)).unwrap();
        assert_eq!((p.x, p.y), (150.0, 50.0));
        assert!(project(&id, &k(), &Vector3::new(0.0, 0.0, -1.0)).is_err());
    }

    #[test]
    fn backprojection_contract() {
        let x = backproject(&k(), Point2::new(50.0, 50.0), 2.0).unwrap();
        assert_eq!(x, Vector3::new(0.0, 0.0, 2.0));
        assert!(backproject(&k(), Point2::new(1.0, 1.0), 0.0).is_err());
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let px = Point2::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0));
            let d = rng.random_range(0.1..50.0);
            let x = backproject(&k(), px, d).unwrap();
            let back = project(&Pose::identity(), &k(), &x).unwrap();
            assert!((back - px).norm() < 1e-9);

            let rot = Rotation3::new(Vector3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            ));
            let pose = Pose::new(rot.into_inner(), Vector3::new(0.1, -0.2, 0.3)).unwrap();
            let world = pose.inverse().transform(&x);
            let uv = project(&pose, &k(), &world).unwrap();
            let depth = pose.transform(&world).z;
            let again = pose.inverse().transform(&backproject(&k(), uv, depth).unwrap());
            assert!((again - world).norm() < 1e-9);
        }
    }
}
