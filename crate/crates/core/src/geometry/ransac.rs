//! P3P RANSAC with Gauss-Newton refinement on the consensus set.

use nalgebra::{Matrix2x3, Matrix3, Matrix6, Point2, Vector3, Vector6};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::descriptor::{Match, MatchSet};
use crate::error::{Error, Result};
use crate::geometry::{p3p_solve, CameraIntrinsics, Pose};
use crate::labels::{Label, LabeledMatches};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    /// Reprojection error bound in pixels; inliers are strictly below it.
    pub threshold: f64,
    pub max_iters: usize,
    pub confidence: f64,
    pub refine_iters: usize,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            threshold: 2.0,
            max_iters: 1000,
            confidence: 0.99,
            refine_iters: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RansacOutcome {
    pub pose: Pose,
    pub labels: LabeledMatches,
    pub iterations: usize,
}

/// Pixel distance between the projection of `x` and `observed`; infinite
/// when `x` lands behind the camera.
pub fn reprojection_error(pose: &Pose, k: &CameraIntrinsics, x: &Vector3<f64>, observed: &Point2<f64>) -> f64 {
    match k.project_camera(&pose.transform(x)) {
        Some(p) => (p - observed).norm(),
        None => f64::INFINITY,
    }
}

struct Corr {
    slot: usize,
    world: Vector3<f64>,
    pixel: Point2<f64>,
}

fn consensus(pose: &Pose, k: &CameraIntrinsics, corr: &[Corr], threshold: f64) -> Vec<bool> {
    corr.iter()
        .map(|c| reprojection_error(pose, k, &c.world, &c.pixel) < threshold)
        .collect()
}

fn required_iterations(inlier_ratio: f64, confidence: f64) -> f64 {
    let w4 = inlier_ratio.powi(4);
    if w4 >= 1.0 {
        return 1.0;
    }
    if w4 <= 0.0 {
        return f64::INFINITY;
    }
    ((1.0 - confidence).ln() / (1.0 - w4).ln()).ceil()
}

fn total_cost(pose: &Pose, k: &CameraIntrinsics, corr: &[&Corr]) -> f64 {
    corr.iter()
        .map(|c| match k.project_camera(&pose.transform(&c.world)) {
            Some(p) => (p - c.pixel).norm_squared(),
            None => f64::INFINITY,
        })
        .sum()
}

/// Minimizes the summed squared reprojection error over `corr`.
fn refine(pose: &Pose, k: &CameraIntrinsics, corr: &[&Corr], iters: usize) -> Pose {
    let mut current = *pose;
    let mut cost = total_cost(&current, k, corr);
    for _ in 0..iters {
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for c in corr {
            let xc = current.transform(&c.world);
            let Some(p) = k.project_camera(&xc) else { continue };
            let r = p - c.pixel;
            let iz = 1.0 / xc.z;
            let dproj = Matrix2x3::new(
                k.fx * iz,
                0.0,
                -k.fx * xc.x * iz * iz,
                0.0,
                k.fy * iz,
                -k.fy * xc.y * iz * iz,
            );
            let dxdw = -xc.cross_matrix();
            let jw = dproj * dxdw;
            let jv = dproj * Matrix3::identity();
            let mut j = nalgebra::Matrix2x6::<f64>::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&jw);
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&jv);
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        let Some(step) = jtj.cholesky().map(|ch| ch.solve(&-jtr)) else { break };
        if !step.iter().all(|v| v.is_finite()) {
            break;
        }
        let omega = Vector3::new(step[0], step[1], step[2]);
        let dt = Vector3::new(step[3], step[4], step[5]);
        let candidate = current.perturbed(&omega, &dt);
        let new_cost = total_cost(&candidate, k, corr);
        if !(new_cost <= cost) {
            break;
        }
        current = candidate;
        let converged = cost - new_cost <= 1e-14 * (1.0 + cost) || step.norm() < 1e-14;
        cost = new_cost;
        if converged {
            break;
        }
    }
    current
}

/// Robust pose of camera 1 relative to camera 0 from 2-D points in image 1
/// (`points2d[idx1]`) and 3-D camera-0 points (`points3d[idx0]`, `None`
/// where no depth is known).
///
/// Matches without depth are labeled unlabeled; the others are inliers if
/// their reprojection error under the final pose is below the threshold and
/// outliers otherwise.
pub fn ransac_p3p(
    points2d: &[Point2<f64>],
    points3d: &[Option<Vector3<f64>>],
    matches: &MatchSet,
    k: &CameraIntrinsics,
    params: &RansacParams,
    seed: u64,
) -> Result<RansacOutcome> {
    if !(params.threshold > 0.0) || !(params.confidence > 0.0 && params.confidence < 1.0) {
        return Err(Error::InvalidArgument("RANSAC threshold/confidence out of range".into()));
    }
    let mut corr = Vec::new();
    for (slot, m) in matches.iter().enumerate() {
        let Match { idx0, idx1, .. } = *m;
        let pixel = *points2d.get(idx1).ok_or_else(|| {
            Error::InvalidArgument(format!("match references 2-D point {idx1} of {}", points2d.len()))
        })?;
        let world = points3d.get(idx0).ok_or_else(|| {
            Error::InvalidArgument(format!("match references 3-D point {idx0} of {}", points3d.len()))
        })?;
        if let Some(world) = world {
            corr.push(Corr { slot, world: *world, pixel });
        }
    }
    if corr.len() < 4 {
        return Err(Error::Insufficient(format!(
            "{} matches with depth, need at least 4",
            corr.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Pose, Vec<bool>, usize)> = None;
    let mut needed = f64::INFINITY;
    let mut iterations = 0;
    while iterations < params.max_iters && (iterations as f64) < needed {
        iterations += 1;
        let pick = sample(&mut rng, corr.len(), 4).into_vec();
        let bearings = [0, 1, 2].map(|i| k.bearing(corr[pick[i]].pixel));
        let worlds = [0, 1, 2].map(|i| corr[pick[i]].world);
        let Ok(solutions) = p3p_solve(&bearings, &worlds) else { continue };
        let fourth = &corr[pick[3]];
        let chosen = solutions
            .iter()
            .map(|p| (p, reprojection_error(p, k, &fourth.world, &fourth.pixel)))
            .filter(|(_, e)| *e < params.threshold)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let Some((pose, _)) = chosen else { continue };
        let mask = consensus(pose, k, &corr, params.threshold);
        let count = mask.iter().filter(|&&b| b).count();
        if best.as_ref().is_none_or(|(_, _, c)| count > *c) {
            needed = required_iterations(count as f64 / corr.len() as f64, params.confidence);
            best = Some((*pose, mask, count));
        }
    }

    let Some((pose, mask, count)) = best.filter(|(_, _, c)| *c >= 4) else {
        return Err(Error::Insufficient(
            "no pose hypothesis reached 4 inliers".into(),
        ));
    };
    let inliers: Vec<&Corr> = corr.iter().zip(&mask).filter(|(_, &b)| b).map(|(c, _)| c).collect();
    let refined = refine(&pose, k, &inliers, params.refine_iters);
    let refined_mask = consensus(&refined, k, &corr, params.threshold);
    let refined_count = refined_mask.iter().filter(|&&b| b).count();
    let (pose, mask) = if refined_count >= count {
        (refined, refined_mask)
    } else {
        (pose, mask)
    };

    let mut labels = vec![Label::Unlabeled; matches.len()];
    for (c, inlier) in corr.iter().zip(mask) {
        labels[c.slot] = if inlier { Label::Inlier } else { Label::Outlier };
    }
    Ok(RansacOutcome {
        pose,
        labels: LabeledMatches::new(matches.clone(), labels)?,
        iterations,
    })
}
