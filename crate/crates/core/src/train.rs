//! Unsupervised training of the score network with the matching pipeline in
//! the loop.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::descriptor::{describe, match_brute_force, MatchSet, SamplingPattern, DEFAULT_PATTERN_SEED};
use crate::error::{Error, Result};
use crate::geometry::{ransac_p3p, CameraIntrinsics, RansacParams};
use crate::image::Image;
use crate::klt::{label_matches_klt, KltParams, TrainingPair};
use crate::labels::{Label, LabeledMatches};
use crate::loss::{LossPlan, Side};
use crate::net::{save_checkpoint, AdamConfig, AdamState, FcnParams};
use crate::nms::{nms_select, InterestPointSet};
use crate::pipeline::{derive_seed, lift_points, pixel_points};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMethod {
    P3p,
    Klt,
}

impl FromStr for LabelMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "p3p" => Ok(Self::P3p),
            "klt" => Ok(Self::Klt),
            other => Err(Error::Parse(format!("unknown labeling method '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n: usize,
    pub nms_radius: f64,
    pub method: LabelMethod,
    pub iterations: usize,
    pub seed: u64,
    pub pattern_seed: u64,
    pub adam: AdamConfig,
    pub klt: KltParams,
    pub ransac: RansacParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n: 500,
            nms_radius: 10.0,
            method: LabelMethod::Klt,
            iterations: 300,
            seed: 0,
            pattern_seed: DEFAULT_PATTERN_SEED,
            adam: AdamConfig::default(),
            klt: KltParams::default(),
            ransac: RansacParams::default(),
        }
    }
}

/// Per-iteration record; losses are totals of the two images, `None` when the
/// iteration was skipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    pub idx0: usize,
    pub idx1: usize,
    pub points: usize,
    pub matches: usize,
    pub inliers: usize,
    pub outliers: usize,
    pub loss0: Option<f64>,
    pub loss1: Option<f64>,
    pub skipped: Option<String>,
}

impl IterationDiagnostics {
    /// Mean of the two image losses.
    pub fn loss(&self) -> Option<f64> {
        Some((self.loss0? + self.loss1?) / 2.0)
    }
}

/// Depth and intrinsics of image 0, needed by the P3P labeling method.
#[derive(Clone, Copy, Debug)]
pub struct DepthInput<'a> {
    pub depth0: &'a Image<f64>,
    pub k: &'a CameraIntrinsics,
}

/// Points, matches and labels of one image pair under the current network.
#[derive(Clone, Debug)]
pub struct LabeledPair<T> {
    pub score0: Image<T>,
    pub score1: Image<T>,
    pub points0: InterestPointSet<T>,
    pub points1: InterestPointSet<T>,
    pub labels: LabeledMatches,
}

/// NMS on both score maps with the point sets cut to a common length, so
/// that ranks in one image always exist in the other.
pub fn extract_pair<T: Scalar>(score0: &Image<T>, score1: &Image<T>, n: usize, radius: f64) -> Result<(InterestPointSet<T>, InterestPointSet<T>)> {
    let p0 = nms_select(score0, n, radius)?;
    let p1 = nms_select(score1, n, radius)?;
    let common = p0.len().min(p1.len());
    Ok((p0.prefix(common), p1.prefix(common)))
}

/// Labels the matches between two images with the configured method.
#[allow(clippy::too_many_arguments)]
pub fn label_pair<T: Scalar>(
    img0: &Image<T>,
    img1: &Image<T>,
    p0: &InterestPointSet<T>,
    p1: &InterestPointSet<T>,
    matches: MatchSet,
    depth: Option<DepthInput<'_>>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<LabeledMatches> {
    match cfg.method {
        LabelMethod::Klt => label_matches_klt(img0, img1, p0, p1, &matches, &cfg.klt),
        LabelMethod::P3p => {
            let d = depth.ok_or_else(|| Error::Insufficient("P3P labeling needs depth for image 0".into()))?;
            let p3 = lift_points(p0, d.depth0, d.k);
            match ransac_p3p(&pixel_points(p1), &p3, &matches, d.k, &cfg.ransac, seed) {
                Ok(out) => Ok(out.labels),
                Err(Error::Insufficient(_)) | Err(Error::Degenerate(_)) => Ok(LabeledMatches::unlabeled(matches)),
                Err(e) => Err(e),
            }
        }
    }
}

/// Runs the pipeline on the given score maps and labels the result.
#[allow(clippy::too_many_arguments)]
pub fn label_with_scores<T: Scalar>(
    img0: &Image<T>,
    img1: &Image<T>,
    score0: Image<T>,
    score1: Image<T>,
    depth: Option<DepthInput<'_>>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<LabeledPair<T>> {
    let (points0, points1) = extract_pair(&score0, &score1, cfg.n, cfg.nms_radius)?;
    let pattern = SamplingPattern::new(cfg.pattern_seed);
    let matches = match_brute_force(&describe(img0, &points0, &pattern), &describe(img1, &points1, &pattern));
    let labels = label_pair(img0, img1, &points0, &points1, matches, depth, cfg, seed)?;
    Ok(LabeledPair { score0, score1, points0, points1, labels })
}

/// One training step on an image pair: both images go through the network,
/// the pipeline labels their matches, and each image's loss is
/// backpropagated and applied with its own Adam step (image 0 first). Both
/// gradients are taken at the parameters the iteration started from.
#[allow(clippy::too_many_arguments)]
pub fn train_iteration<T: Scalar>(
    params: &mut FcnParams<T>,
    state: &mut AdamState<T>,
    img0: &Image<T>,
    img1: &Image<T>,
    depth: Option<DepthInput<'_>>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<IterationDiagnostics> {
    if img0.dims() != img1.dims() {
        return Err(Error::Dimension { expected: img0.dims(), found: img1.dims() });
    }
    let cache0 = params.forward_with_cache(img0)?;
    let cache1 = params.forward_with_cache(img1)?;
    let pair = label_with_scores(img0, img1, cache0.output(), cache1.output(), depth, cfg, seed)?;
    let mut diag = IterationDiagnostics {
        iteration: 0,
        idx0: 0,
        idx1: 1,
        points: pair.points0.len(),
        matches: pair.labels.len(),
        inliers: pair.labels.num_inliers(),
        outliers: pair.labels.num_outliers(),
        loss0: None,
        loss1: None,
        skipped: None,
    };
    if diag.inliers + diag.outliers == 0 {
        diag.skipped = Some(if diag.matches == 0 { "no matches" } else { "no labeled matches" }.into());
        return Ok(diag);
    }
    let plan0 = LossPlan::new(&pair.points0, &pair.points1, &pair.labels, Side::Zero, img0.dims())?;
    let plan1 = LossPlan::new(&pair.points1, &pair.points0, &pair.labels, Side::One, img1.dims())?;
    diag.loss0 = Some(plan0.evaluate(&pair.score0)?.total.to_f64_lossy());
    diag.loss1 = Some(plan1.evaluate(&pair.score1)?.total.to_f64_lossy());
    let g0 = params.backward(&cache0, &plan0.gradient(&pair.score0)?)?;
    let g1 = params.backward(&cache1, &plan1.gradient(&pair.score1)?)?;
    state.step(params, &g0)?;
    state.step(params, &g1)?;
    Ok(diag)
}

/// Training frames plus optional per-frame depth for the P3P method.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a, T> {
    pub frames: &'a [Image<T>],
    pub depths: Option<&'a [Image<f64>]>,
    pub k: Option<&'a CameraIntrinsics>,
}

/// Pair order for `iterations` steps: the pair list reshuffled every pass.
pub fn pair_schedule(num_pairs: usize, iterations: usize, seed: u64) -> Vec<usize> {
    let mut out = Vec::with_capacity(iterations);
    let mut epoch = 0;
    while out.len() < iterations && num_pairs > 0 {
        let mut order: Vec<usize> = (0..num_pairs).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch)));
        out.extend(order.into_iter().take(iterations - out.len()));
        epoch += 1;
    }
    out
}

/// Runs `cfg.iterations` steps over `pairs`; `on_iteration` sees each record
/// as it is produced.
pub fn train<T: Scalar>(
    params: &mut FcnParams<T>,
    state: &mut AdamState<T>,
    data: &TrainData<'_, T>,
    pairs: &[TrainingPair],
    cfg: &TrainConfig,
    mut on_iteration: impl FnMut(&IterationDiagnostics),
) -> Result<Vec<IterationDiagnostics>> {
    if pairs.is_empty() {
        return Err(Error::Insufficient("no training pairs".into()));
    }
    let mut log = Vec::with_capacity(cfg.iterations);
    for (it, &p) in pair_schedule(pairs.len(), cfg.iterations, cfg.seed).iter().enumerate() {
        let TrainingPair { idx0, idx1, .. } = pairs[p];
        let (img0, img1) = (&data.frames[idx0], &data.frames[idx1]);
        let depth = match (data.depths, data.k) {
            (Some(d), Some(k)) => Some(DepthInput { depth0: &d[idx0], k }),
            _ => None,
        };
        let mut diag = train_iteration(params, state, img0, img1, depth, cfg, derive_seed(cfg.seed, it as u64))?;
        diag.iteration = it;
        diag.idx0 = idx0;
        diag.idx1 = idx1;
        on_iteration(&diag);
        log.push(diag);
    }
    Ok(log)
}

/// Writes the checkpoint and a JSON sidecar with the diagnostics next to it.
pub fn save_training<T: Scalar>(params: &FcnParams<T>, log: &[IterationDiagnostics], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    save_checkpoint(params, path)?;
    let sidecar = path.with_extension("json");
    let json = serde_json::to_string_pretty(log).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))
}

/// Mean loss over the non-skipped iterations of a slice of the log.
pub fn mean_loss(log: &[IterationDiagnostics]) -> Option<f64> {
    let v: Vec<f64> = log.iter().filter_map(|d| d.loss()).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Ranks starting at 1, ties sharing their average rank.
fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; `None` for fewer than two samples or a
/// constant input.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

/// Scores at both ends of every inlier match.
pub fn inlier_score_pairs<T: Scalar>(pair: &LabeledPair<T>) -> (Vec<f64>, Vec<f64>) {
    pair.labels
        .with_label(Label::Inlier)
        .map(|m| {
            let a = pair.points0.get(m.idx0);
            let b = pair.points1.get(m.idx1);
            (pair.score0.get(a.x, a.y).to_f64_lossy(), pair.score1.get(b.x, b.y).to_f64_lossy())
        })
        .unzip()
}

/// Mean Spearman correlation of matched inlier scores over `pairs`, pairs
/// with an undefined correlation left out.
pub fn rank_consistency<T: Scalar>(params: &FcnParams<T>, data: &TrainData<'_, T>, pairs: &[TrainingPair], cfg: &TrainConfig) -> Result<Option<f64>> {
    let mut values = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        let (img0, img1) = (&data.frames[p.idx0], &data.frames[p.idx1]);
        let depth = match (data.depths, data.k) {
            (Some(d), Some(k)) => Some(DepthInput { depth0: &d[p.idx0], k }),
            _ => None,
        };
        let pair = label_with_scores(img0, img1, params.forward(img0)?, params.forward(img1)?, depth, cfg, derive_seed(cfg.seed, i as u64))?;
        let (a, b) = inlier_score_pairs(&pair);
        values.extend(spearman(&a, &b));
    }
    Ok((!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::klt::test_texture;
    use crate::net::FcnConfig;
    use proptest::prelude::*;

    fn small_cfg() -> TrainConfig {
        TrainConfig { n: 60, nms_radius: 4.0, ..TrainConfig::default() }
    }

    fn tiny_net(seed: u64) -> FcnParams<f32> {
        FcnParams::init(FcnConfig { depth: 2, conv_channels: 4, deconv_channels: 6, seed }).unwrap()
    }

    #[test]
    fn identical_images_have_no_outliers() {
        let img: Image<f32> = test_texture(64, 64, 3).cast();
        let mut params = tiny_net(1);
        let mut state = AdamState::new(&params, AdamConfig::default());
        let before = params.clone();
        let d = train_iteration(&mut params, &mut state, &img, &img, None, &small_cfg(), 0).unwrap();
        assert!(d.skipped.is_none());
        assert!(d.inliers > 0);
        assert_eq!(d.outliers, 0);
        assert_eq!(state.step, 2);
        assert_ne!(params, before);
        // same image and same ranking: rank terms vanish, loss is mean(1 - S)
        let score = before.forward(&img).unwrap();
        let (p0, _) = extract_pair(&score, &score, 60, 4.0).unwrap();
        let describable = describe(&img, &p0, &SamplingPattern::default());
        let want: f64 = describable
            .iter()
            .map(|dd| 1.0 - score.get(p0.get(dd.index).x, p0.get(dd.index).y) as f64)
            .sum::<f64>()
            / describable.len() as f64;
        assert_eq!(d.inliers, describable.len());
        assert!((d.loss0.unwrap() - want).abs() < 1e-5);
    }

    #[test]
    fn featureless_pair_is_skipped() {
        let img = Image::<f32>::filled(40, 40, 0.5);
        let mut params = tiny_net(2);
        let mut state = AdamState::new(&params, AdamConfig::default());
        let before = params.clone();
        // 40x40 leaves too little room for descriptors at radius 4 beyond the margin
        let tiny = Image::<f32>::filled(30, 30, 0.5);
        let d = train_iteration(&mut params, &mut state, &tiny, &tiny, None, &small_cfg(), 0).unwrap();
        assert_eq!(d.skipped.as_deref(), Some("no matches"));
        assert_eq!(params, before);
        assert_eq!(state.step, 0);
        let d = train_iteration(&mut params, &mut state, &img, &img, None, &TrainConfig { method: LabelMethod::P3p, ..small_cfg() }, 0);
        assert!(matches!(d, Err(Error::Insufficient(_))));
    }

    #[test]
    fn schedule_covers_pairs() {
        let s = pair_schedule(4, 10, 9);
        assert_eq!(s.len(), 10);
        let mut first: Vec<usize> = s[..4].to_vec();
        first.sort();
        assert_eq!(first, vec![0, 1, 2, 3]);
        assert_eq!(s, pair_schedule(4, 10, 9));
    }

    #[test]
    fn spearman_known_values() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), None);
        // ties: ranks (1.5, 1.5, 3) vs (1, 2, 3)
        let r = spearman(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((r - 0.8660254037844387).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn spearman_bounded_and_symmetric(v in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..40)) {
            let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            if let Some(r) = spearman(&a, &b) {
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
                prop_assert!((r - spearman(&b, &a).unwrap()).abs() < 1e-12);
            }
        }
    }
}
