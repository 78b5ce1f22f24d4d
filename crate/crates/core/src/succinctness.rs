//! Succinctness evaluation: the smallest per-image interest point count `n_k`
//! that still yields `k` RANSAC inliers, its curve over pairs, and AUCs.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::descriptor::SamplingPattern;
use crate::error::{Error, Result};
use crate::geometry::{pose_errors, rotation_angle, CameraIntrinsics, Pose, RansacParams};
use crate::image::Image;
use crate::pipeline::{derive_seed, estimate_pose, Extraction, PipelineConfig};
use crate::scalar::Scalar;

/// Outcome of the `n_k` search on one pair. Errors are in degrees and meters
/// and are present exactly when `n_k` is.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub n_k: Option<usize>,
    pub e_rot: Option<f64>,
    pub e_trans: Option<f64>,
}

impl PairResult {
    pub const ABSENT: Self = Self { n_k: None, e_rot: None, e_trans: None };
}

/// One pipeline run on the `n`-point prefixes of both extractions.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub n: usize,
    pub inliers: usize,
    /// Estimated pose of camera 1 relative to camera 0, if RANSAC succeeded.
    pub pose: Option<Pose>,
}

/// Everything `find_nk` needs about one image pair.
#[derive(Clone, Copy, Debug)]
pub struct PairContext<'a, T> {
    pub e0: &'a Extraction<T>,
    pub e1: &'a Extraction<T>,
    pub depth0: &'a Image<f64>,
    pub k: &'a CameraIntrinsics,
    /// Ground truth `T_1^0`.
    pub gt: &'a Pose,
}

impl<T: Scalar> PairContext<'_, T> {
    /// Runs the pipeline at `n` points per image with RANSAC seeded from
    /// `(seed, n)`. Data errors propagate; a RANSAC failure is zero inliers.
    pub fn probe(&self, n: usize, ransac: &RansacParams, seed: u64) -> Result<Probe> {
        let e0 = self.e0.prefix(n);
        let e1 = self.e1.prefix(n);
        match estimate_pose(&e0, &e1, self.depth0, self.k, ransac, derive_seed(seed, n as u64)) {
            Ok((_, out)) => Ok(Probe { n, inliers: out.labels.num_inliers(), pose: Some(out.pose) }),
            Err(Error::Insufficient(_)) | Err(Error::Degenerate(_)) => Ok(Probe { n, inliers: 0, pose: None }),
            Err(e) => Err(e),
        }
    }

    fn result(&self, probe: &Probe) -> PairResult {
        let pose = probe.pose.as_ref().expect("successful probe has a pose");
        let (e_rot, e_trans) = pose_errors(pose, self.gt);
        PairResult { n_k: Some(probe.n), e_rot: Some(e_rot), e_trans: Some(e_trans) }
    }
}

fn check_k(k: usize, n_max: usize) -> Result<()> {
    if k < 4 {
        return Err(Error::InvalidArgument(format!("k must be at least 4, got {k}")));
    }
    if n_max < k {
        return Err(Error::InvalidArgument(format!("n_max ({n_max}) must be at least k ({k})")));
    }
    Ok(())
}

/// Binary search for the smallest `n` in `[k, n_max]` whose probe reaches `k`
/// inliers, after checking `n_max` itself.
pub fn find_nk<T: Scalar>(ctx: &PairContext<'_, T>, k: usize, n_max: usize, ransac: &RansacParams, seed: u64) -> Result<PairResult> {
    check_k(k, n_max)?;
    let top = ctx.probe(n_max, ransac, seed)?;
    if top.inliers < k {
        return Ok(PairResult::ABSENT);
    }
    let (mut lo, mut hi, mut best) = (k, n_max, top);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        let p = ctx.probe(mid, ransac, seed)?;
        if p.inliers >= k {
            hi = mid;
            best = p;
        } else {
            lo = mid + 1;
        }
    }
    Ok(ctx.result(&best))
}

/// Exhaustive reference for [`find_nk`]: the first `n` in `[k, n_max]` that
/// reaches `k` inliers.
pub fn find_nk_linear<T: Scalar>(ctx: &PairContext<'_, T>, k: usize, n_max: usize, ransac: &RansacParams, seed: u64) -> Result<PairResult> {
    check_k(k, n_max)?;
    for n in k..=n_max {
        let p = ctx.probe(n, ransac, seed)?;
        if p.inliers >= k {
            return Ok(ctx.result(&p));
        }
    }
    Ok(PairResult::ABSENT)
}

fn nonempty(results: &[PairResult]) -> Result<()> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("no pair results".into()));
    }
    Ok(())
}

/// `s(n)` for `n = 0..=n_max`: the fraction of pairs with `n_k <= n`.
pub fn succinctness_curve(results: &[PairResult], n_max: usize) -> Result<Vec<f64>> {
    nonempty(results)?;
    let mut counts = vec![0usize; n_max + 1];
    for n in results.iter().filter_map(|r| r.n_k).filter(|&n| n <= n_max) {
        counts[n] += 1;
    }
    let l = results.len() as f64;
    let mut acc = 0;
    Ok(counts
        .into_iter()
        .map(|c| {
            acc += c;
            acc as f64 / l
        })
        .collect())
}

/// `(1 / n_max) * mean(n_max - n_k)`, absent pairs contributing 0.
pub fn auc(results: &[PairResult], n_max: usize) -> Result<f64> {
    nonempty(results)?;
    if n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be positive".into()));
    }
    let sum: f64 = results
        .iter()
        .filter_map(|r| r.n_k)
        .map(|n| n_max.saturating_sub(n) as f64)
        .fold(0.0, |a, b| a + b);
    Ok(sum / (results.len() as f64 * n_max as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Rotation,
    Translation,
}

fn error_of(r: &PairResult, kind: ErrorKind) -> Option<f64> {
    match kind {
        ErrorKind::Rotation => r.e_rot,
        ErrorKind::Translation => r.e_trans,
    }
}

/// Normalized area under the fraction-below-threshold curve on `[0, e_max]`.
pub fn error_auc(results: &[PairResult], kind: ErrorKind, e_max: f64) -> Result<f64> {
    nonempty(results)?;
    if e_max.is_nan() || e_max <= 0.0 {
        return Err(Error::InvalidArgument(format!("e_max must be positive, got {e_max}")));
    }
    let sum: f64 = results
        .iter()
        .filter_map(|r| error_of(r, kind))
        .map(|e| (e_max - e).max(0.0) / e_max)
        .fold(0.0, |a, b| a + b);
    Ok(sum / results.len() as f64)
}

/// Samples `(threshold, fraction of pairs with error <= threshold)` at
/// `samples + 1` evenly spaced thresholds on `[0, e_max]`.
pub fn error_curve(results: &[PairResult], kind: ErrorKind, e_max: f64, samples: usize) -> Result<Vec<(f64, f64)>> {
    nonempty(results)?;
    let samples = samples.max(1);
    let errs: Vec<f64> = results.iter().filter_map(|r| error_of(r, kind)).collect();
    let l = results.len() as f64;
    Ok((0..=samples)
        .map(|i| {
            let e = e_max * i as f64 / samples as f64;
            (e, errs.iter().filter(|&&x| x <= e).count() as f64 / l)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSample {
    pub pairs: Vec<(usize, usize)>,
    pub candidates: usize,
    /// Fewer candidates than requested; every candidate was returned.
    pub short: bool,
}

/// Seeded sampling without replacement among ordered pairs `(i, j)`, `i != j`,
/// whose relative pose moves at most `delta_t` meters and `delta_r` degrees.
pub fn sample_eval_pairs(poses: &[Pose], delta_t: f64, delta_r: f64, l: usize, seed: u64) -> Result<PairSample> {
    let mut candidates = Vec::new();
    for i in 0..poses.len() {
        for j in 0..poses.len() {
            if i == j {
                continue;
            }
            let rel = Pose::relative(&poses[i], &poses[j]);
            if rel.translation().norm() <= delta_t && rotation_angle(rel.rotation()).to_degrees() <= delta_r {
                candidates.push((i, j));
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::Insufficient("no image pair within the pose thresholds".into()));
    }
    let n = candidates.len();
    if n <= l {
        return Ok(PairSample { pairs: candidates, candidates: n, short: n < l });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, n, l).into_vec();
    picked.sort_unstable();
    Ok(PairSample { pairs: picked.into_iter().map(|i| candidates[i]).collect(), candidates: n, short: false })
}

/// One frame of an evaluation sequence: image, its score map and, for frames
/// used as image 0, depth.
#[derive(Clone, Debug)]
pub struct EvalFrame<T> {
    pub image: Image<T>,
    pub score: Image<T>,
    pub depth: Option<Image<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalParams {
    pub k: usize,
    pub n_max: usize,
    pub l: usize,
    pub delta_t: f64,
    pub delta_r: f64,
    pub seed: u64,
    pub e_max_rot: f64,
    pub e_max_trans: f64,
    pub curve_samples: usize,
    pub pipeline: PipelineConfig,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            k: 10,
            n_max: 200,
            l: 100,
            delta_t: 5.0,
            delta_r: 30.0,
            seed: 0,
            e_max_rot: 1.0,
            e_max_trans: 1.0,
            curve_samples: 100,
            pipeline: PipelineConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub idx0: usize,
    pub idx1: usize,
    #[serde(flatten)]
    pub result: PairResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccinctnessReport {
    pub detector: String,
    pub params: EvalParams,
    pub candidates: usize,
    pub short: bool,
    pub pairs: Vec<PairRecord>,
    /// `s(n)` for `n = 0..=n_max`.
    pub curve: Vec<f64>,
    pub auc: f64,
    pub auc_rot: f64,
    pub auc_trans: f64,
    pub rot_curve: Vec<(f64, f64)>,
    pub trans_curve: Vec<(f64, f64)>,
}

impl SuccinctnessReport {
    pub fn results(&self) -> Vec<PairResult> {
        self.pairs.iter().map(|p| p.result).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KSweepRow {
    pub k: usize,
    pub auc: f64,
    pub auc_rot: f64,
    pub auc_trans: f64,
}

/// Extracts every frame referenced by `pairs` once at `n_max`.
fn extract_frames<T: Scalar>(frames: &[EvalFrame<T>], pairs: &[(usize, usize)], n_max: usize, cfg: &PipelineConfig) -> Result<Vec<Option<Extraction<T>>>> {
    let pattern = SamplingPattern::new(cfg.pattern_seed);
    let mut out: Vec<Option<Extraction<T>>> = vec![None; frames.len()];
    for &(i, j) in pairs {
        for f in [i, j] {
            let frame = frames.get(f).ok_or_else(|| Error::InvalidArgument(format!("frame index {f} out of range")))?;
            if out[f].is_none() {
                out[f] = Some(Extraction::new(&frame.image, &frame.score, n_max, cfg.nms_radius, &pattern)?);
            }
        }
    }
    Ok(out)
}

/// Runs `find_nk` on every pair for every `k`, sharing one extraction per
/// frame. Returns results indexed `[k_index][pair_index]`.
pub fn run_pairs<T: Scalar>(
    frames: &[EvalFrame<T>],
    poses: &[Pose],
    intrinsics: &CameraIntrinsics,
    pairs: &[(usize, usize)],
    ks: &[usize],
    params: &EvalParams,
) -> Result<Vec<Vec<PairResult>>> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no evaluation pairs".into()));
    }
    if poses.len() != frames.len() {
        return Err(Error::Insufficient(format!("{} poses for {} frames", poses.len(), frames.len())));
    }
    for &k in ks {
        check_k(k, params.n_max)?;
    }
    let extractions = extract_frames(frames, pairs, params.n_max, &params.pipeline)?;
    let mut table = vec![Vec::with_capacity(pairs.len()); ks.len()];
    for (p, &(i, j)) in pairs.iter().enumerate() {
        let depth0 = frames[i]
            .depth
            .as_ref()
            .ok_or_else(|| Error::Insufficient(format!("frame {i} has no depth")))?;
        let gt = Pose::relative(&poses[i], &poses[j]);
        let ctx = PairContext {
            e0: extractions[i].as_ref().expect("extracted"),
            e1: extractions[j].as_ref().expect("extracted"),
            depth0,
            k: intrinsics,
            gt: &gt,
        };
        let pair_seed = derive_seed(params.seed, p as u64);
        for (row, &k) in table.iter_mut().zip(ks) {
            row.push(find_nk(&ctx, k, params.n_max, &params.pipeline.ransac, pair_seed)?);
        }
    }
    Ok(table)
}

/// Builds the report for one `k` from per-pair results.
pub fn build_report(detector: &str, params: &EvalParams, sample: &PairSample, results: &[PairResult]) -> Result<SuccinctnessReport> {
    if results.len() != sample.pairs.len() {
        return Err(Error::InvalidArgument("one result per pair required".into()));
    }
    Ok(SuccinctnessReport {
        detector: detector.to_string(),
        params: params.clone(),
        candidates: sample.candidates,
        short: sample.short,
        pairs: sample
            .pairs
            .iter()
            .zip(results)
            .map(|(&(idx0, idx1), &result)| PairRecord { idx0, idx1, result })
            .collect(),
        curve: succinctness_curve(results, params.n_max)?,
        auc: auc(results, params.n_max)?,
        auc_rot: error_auc(results, ErrorKind::Rotation, params.e_max_rot)?,
        auc_trans: error_auc(results, ErrorKind::Translation, params.e_max_trans)?,
        rot_curve: error_curve(results, ErrorKind::Rotation, params.e_max_rot, params.curve_samples)?,
        trans_curve: error_curve(results, ErrorKind::Translation, params.e_max_trans, params.curve_samples)?,
    })
}

/// Samples pairs from the ground truth and evaluates them at `params.k`.
pub fn evaluate<T: Scalar>(
    detector: &str,
    frames: &[EvalFrame<T>],
    poses: &[Pose],
    intrinsics: &CameraIntrinsics,
    params: &EvalParams,
) -> Result<SuccinctnessReport> {
    let sample = sample_eval_pairs(poses, params.delta_t, params.delta_r, params.l, params.seed)?;
    let table = run_pairs(frames, poses, intrinsics, &sample.pairs, &[params.k], params)?;
    build_report(detector, params, &sample, &table[0])
}

/// AUCs for several `k` on the same pairs and extractions.
pub fn k_sweep<T: Scalar>(
    frames: &[EvalFrame<T>],
    poses: &[Pose],
    intrinsics: &CameraIntrinsics,
    pairs: &[(usize, usize)],
    ks: &[usize],
    params: &EvalParams,
) -> Result<Vec<KSweepRow>> {
    let table = run_pairs(frames, poses, intrinsics, pairs, ks, params)?;
    ks.iter()
        .zip(&table)
        .map(|(&k, results)| {
            Ok(KSweepRow {
                k,
                auc: auc(results, params.n_max)?,
                auc_rot: error_auc(results, ErrorKind::Rotation, params.e_max_rot)?,
                auc_trans: error_auc(results, ErrorKind::Translation, params.e_max_trans)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Vector3};
    use proptest::prelude::*;

    fn r(n: Option<usize>, e: Option<(f64, f64)>) -> PairResult {
        PairResult { n_k: n, e_rot: e.map(|e| e.0), e_trans: e.map(|e| e.1) }
    }

    #[test]
    fn hand_evaluated_auc() {
        let res = [r(Some(50), Some((0.2, 0.1))), r(Some(150), Some((0.6, 0.3)))];
        assert_eq!(auc(&res, 200).unwrap(), 0.5);
        let s = succinctness_curve(&res, 200).unwrap();
        assert_eq!(s.len(), 201);
        assert_eq!(s[100], 0.5);
        assert_eq!(s[150], 1.0);
        assert_eq!(s[49], 0.0);
        assert!((error_auc(&res, ErrorKind::Rotation, 1.0).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn degenerate_aucs() {
        let absent = [PairResult::ABSENT; 3];
        assert!(auc(&absent, 200).unwrap().is_sign_positive());
        assert_eq!(auc(&absent, 200).unwrap(), 0.0);
        assert!(succinctness_curve(&absent, 200).unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(error_auc(&absent, ErrorKind::Translation, 1.0).unwrap(), 0.0);
        let ideal = [r(Some(0), Some((0.0, 0.0)))];
        assert_eq!(auc(&ideal, 200).unwrap(), 1.0);
        assert_eq!(error_auc(&ideal, ErrorKind::Rotation, 1.0).unwrap(), 1.0);
        let bad = [r(Some(10), Some((1.0, 3.0)))];
        assert_eq!(error_auc(&bad, ErrorKind::Rotation, 1.0).unwrap(), 0.0);
        assert!(auc(&[], 200).is_err());
        assert!(succinctness_curve(&[], 200).is_err());
    }

    #[test]
    fn pair_sampling() {
        let near = Pose::identity();
        let far = Pose::from_approx(Rotation3::identity().into_inner(), Vector3::new(10.0, 0.0, 0.0));
        let s = sample_eval_pairs(&[near, near, far], 5.0, 30.0, 100, 1).unwrap();
        assert_eq!(s.pairs, vec![(0, 1), (1, 0)]);
        assert!(s.short);
        assert!(sample_eval_pairs(&[near, far], 5.0, 30.0, 10, 1).is_err());
        let poses: Vec<Pose> = (0..8)
            .map(|i| Pose::from_approx(Rotation3::identity().into_inner(), Vector3::new(0.1 * i as f64, 0.0, 0.0)))
            .collect();
        let a = sample_eval_pairs(&poses, 5.0, 30.0, 10, 7).unwrap();
        let b = sample_eval_pairs(&poses, 5.0, 30.0, 10, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.pairs.len(), 10);
        assert_eq!(a.candidates, 56);
        let mut dedup = a.pairs.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), 10);
    }

    fn result_strategy() -> impl Strategy<Value = PairResult> {
        prop_oneof![
            Just(PairResult::ABSENT),
            (4usize..300, 0.0f64..2.0, 0.0f64..2.0).prop_map(|(n, a, b)| r(Some(n), Some((a, b)))),
        ]
    }

    proptest! {
        #[test]
        fn curve_and_auc_invariants(results in prop::collection::vec(result_strategy(), 1..30), n_max in 4usize..250) {
            let s = succinctness_curve(&results, n_max).unwrap();
            prop_assert_eq!(s.len(), n_max + 1);
            prop_assert!(s.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(s.iter().all(|&v| (0.0..=1.0).contains(&v)));
            let a = auc(&results, n_max).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            let step: f64 = s[..n_max].iter().sum::<f64>() / n_max as f64;
            prop_assert!((a - step).abs() < 1e-9);
            let e = error_auc(&results, ErrorKind::Rotation, 1.0).unwrap();
            prop_assert!((0.0..=1.0).contains(&e));
        }
    }
}
