//! The two-view pipeline: extraction, description, matching and pose.

use nalgebra::{Point2, Vector3};
use serde::{Deserialize, Serialize};

use crate::descriptor::{describe, match_brute_force, Described, MatchSet, SamplingPattern, DEFAULT_PATTERN_SEED};
use crate::error::{Error, Result};
use crate::geometry::{backproject, ransac_p3p, CameraIntrinsics, RansacOutcome, RansacParams};
use crate::image::Image;
use crate::nms::{nms_select, InterestPointSet};
use crate::scalar::Scalar;

/// Mixes two integers into a well-spread 64-bit seed (splitmix64 finalizer).
pub fn derive_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub nms_radius: f64,
    pub pattern_seed: u64,
    pub ransac: RansacParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            nms_radius: 10.0,
            pattern_seed: DEFAULT_PATTERN_SEED,
            ransac: RansacParams::default(),
        }
    }
}

/// One image after extraction at some maximum count: points in rank order
/// and the descriptors of the describable ones.
#[derive(Clone, Debug)]
pub struct Extraction<T> {
    pub points: InterestPointSet<T>,
    pub descriptors: Vec<Described>,
    pub dims: (usize, usize),
}

impl<T: Scalar> Extraction<T> {
    pub fn new(img: &Image<T>, score: &Image<T>, n: usize, radius: f64, pattern: &SamplingPattern) -> Result<Self> {
        if img.dims() != score.dims() {
            return Err(Error::Dimension { expected: img.dims(), found: score.dims() });
        }
        let points = nms_select(score, n, radius)?;
        let descriptors = describe(img, &points, pattern);
        Ok(Self { points, descriptors, dims: img.dims() })
    }

    /// The extraction NMS would have produced for `n` points.
    pub fn prefix(&self, n: usize) -> Self {
        let points = self.points.prefix(n);
        let len = points.len();
        let descriptors = self.descriptors.iter().filter(|d| d.index < len).copied().collect();
        Self { points, descriptors, dims: self.dims }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn match_extractions<T: Scalar>(e0: &Extraction<T>, e1: &Extraction<T>) -> MatchSet {
    match_brute_force(&e0.descriptors, &e1.descriptors)
}

/// Camera-frame 3-D points of image-0 interest points where depth is valid.
pub fn lift_points<T: Scalar>(points: &InterestPointSet<T>, depth: &Image<f64>, k: &CameraIntrinsics) -> Vec<Option<Vector3<f64>>> {
    points
        .points()
        .iter()
        .map(|p| {
            let d = depth.get(p.x, p.y);
            (d > 0.0).then(|| backproject(k, Point2::new(p.x as f64, p.y as f64), d).expect("positive depth"))
        })
        .collect()
}

pub fn pixel_points<T: Scalar>(points: &InterestPointSet<T>) -> Vec<Point2<f64>> {
    points.points().iter().map(|p| Point2::new(p.x as f64, p.y as f64)).collect()
}

/// Matches two extractions and estimates the pose of camera 1 relative to
/// camera 0 with P3P RANSAC.
pub fn estimate_pose<T: Scalar>(
    e0: &Extraction<T>,
    e1: &Extraction<T>,
    depth0: &Image<f64>,
    k: &CameraIntrinsics,
    ransac: &RansacParams,
    seed: u64,
) -> Result<(MatchSet, RansacOutcome)> {
    if depth0.dims() != e0.dims {
        return Err(Error::Dimension { expected: e0.dims, found: depth0.dims() });
    }
    let matches = match_extractions(e0, e1);
    let p3 = lift_points(&e0.points, depth0, k);
    let p2 = pixel_points(&e1.points);
    let outcome = ransac_p3p(&p2, &p3, &matches, k, ransac, seed)?;
    Ok((matches, outcome))
}
