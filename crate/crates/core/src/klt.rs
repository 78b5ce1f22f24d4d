//! Pyramidal Lucas-Kanade tracking, bidirectional match labeling and
//! overlap-based selection of training pairs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::descriptor::MatchSet;
use crate::detectors::fast_score;
use crate::error::{Error, Result};
use crate::filter::{gaussian_pyramid, gradients};
use crate::image::Image;
use crate::labels::{Label, LabeledMatches};
use crate::nms::{nms_select, InterestPointSet};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackStatus {
    Alive,
    LostBorder,
    LostResidual,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub origin: (f64, f64),
    pub position: (f64, f64),
    pub status: TrackStatus,
}

impl Track {
    pub fn is_alive(&self) -> bool {
        self.status == TrackStatus::Alive
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KltParams {
    pub window: usize,
    pub levels: usize,
    pub max_iters: usize,
    pub eps: f64,
    /// Lower bound on the smallest eigenvalue of the per-pixel normal matrix.
    pub min_eigenvalue: f64,
    /// Upper bound on the mean absolute intensity residual at convergence.
    pub max_residual: f64,
    pub pyramid_sigma: f64,
    /// Bidirectional consistency bound used for labeling, in pixels.
    pub inlier_distance: f64,
}

impl Default for KltParams {
    fn default() -> Self {
        Self {
            window: 11,
            levels: 3,
            max_iters: 30,
            eps: 0.01,
            min_eigenvalue: 1e-6,
            max_residual: 0.05,
            pyramid_sigma: 1.0,
            inlier_distance: 3.0,
        }
    }
}

impl KltParams {
    fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::InvalidArgument(format!("KLT window {} must be odd and >= 3", self.window)));
        }
        if self.levels == 0 || self.max_iters == 0 || !(self.eps > 0.0) {
            return Err(Error::InvalidArgument("KLT levels, iterations and eps must be positive".into()));
        }
        Ok(())
    }
}

/// An image prepared for tracking: pyramid levels and their gradients.
#[derive(Clone, Debug)]
pub struct KltFrame {
    levels: Vec<(Image<f64>, Image<f64>, Image<f64>)>,
}

impl KltFrame {
    /// Uses as many of `params.levels` as the image size permits.
    pub fn new<T: Scalar>(img: &Image<T>, params: &KltParams) -> Result<Self> {
        params.validate()?;
        let img = img.cast::<f64>();
        let mut levels = params.levels;
        while levels > 1 && gaussian_pyramid(&img, levels, params.pyramid_sigma).is_err() {
            levels -= 1;
        }
        let pyr = gaussian_pyramid(&img, levels, params.pyramid_sigma)?;
        let levels = pyr
            .levels()
            .iter()
            .map(|l| {
                let (gx, gy) = gradients(l)?;
                Ok((l.clone(), gx, gy))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { levels })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.levels[0].0.dims()
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }
}

fn window_inside(x: f64, y: f64, half: f64, w: usize, h: usize) -> bool {
    x - half >= 0.0 && y - half >= 0.0 && x + half <= (w - 1) as f64 && y + half <= (h - 1) as f64
}

/// Tracks `p` from `f0` into `f1` with a translation-only warp.
pub fn klt_track_frames(f0: &KltFrame, f1: &KltFrame, p: (f64, f64), params: &KltParams) -> Track {
    let (w, h) = f0.dims();
    let half = (params.window / 2) as i64;
    let lost = |status| Track { origin: p, position: p, status };
    if !window_inside(p.0, p.1, half as f64, w, h) || f1.dims() != (w, h) {
        return lost(TrackStatus::LostBorder);
    }
    let levels = f0.num_levels().min(f1.num_levels());
    let n = ((2 * half + 1) * (2 * half + 1)) as f64;
    let mut g = (0.0f64, 0.0f64);
    let mut residual = 0.0;
    for level in (0..levels).rev() {
        let scale = (1u64 << level) as f64;
        let (i0, gx, gy) = &f0.levels[level];
        let i1 = &f1.levels[level].0;
        let (px, py) = (p.0 / scale, p.1 / scale);
        let mut template = Vec::with_capacity(n as usize);
        let (mut gxx, mut gxy, mut gyy) = (0.0, 0.0, 0.0);
        for dy in -half..=half {
            for dx in -half..=half {
                let (x, y) = (px + dx as f64, py + dy as f64);
                let (ix, iy) = (gx.bilinear(x, y), gy.bilinear(x, y));
                template.push((i0.bilinear(x, y), ix, iy, dx as f64, dy as f64));
                gxx += ix * ix;
                gxy += ix * iy;
                gyy += iy * iy;
            }
        }
        let (a, b, c) = (gxx / n, gxy / n, gyy / n);
        let min_eig = 0.5 * (a + c) - (0.25 * (a - c) * (a - c) + b * b).sqrt();
        if !(min_eig >= params.min_eigenvalue) {
            return lost(TrackStatus::LostResidual);
        }
        let det = gxx * gyy - gxy * gxy;
        for _ in 0..params.max_iters {
            let (qx, qy) = (px + g.0, py + g.1);
            let (mut bx, mut by) = (0.0, 0.0);
            for &(t, ix, iy, dx, dy) in &template {
                let e = t - i1.bilinear(qx + dx, qy + dy);
                bx += e * ix;
                by += e * iy;
            }
            let sx = (gyy * bx - gxy * by) / det;
            let sy = (gxx * by - gxy * bx) / det;
            if !(sx.is_finite() && sy.is_finite()) {
                return lost(TrackStatus::LostResidual);
            }
            g.0 += sx;
            g.1 += sy;
            if sx * sx + sy * sy < params.eps * params.eps {
                break;
            }
        }
        if level == 0 {
            let (qx, qy) = (px + g.0, py + g.1);
            if !window_inside(qx, qy, half as f64, w, h) {
                return Track { origin: p, position: (qx, qy), status: TrackStatus::LostBorder };
            }
            residual = template
                .iter()
                .map(|&(t, _, _, dx, dy)| (t - i1.bilinear(qx + dx, qy + dy)).abs())
                .sum::<f64>()
                / n;
        } else {
            g = (2.0 * g.0, 2.0 * g.1);
        }
    }
    let position = (p.0 + g.0, p.1 + g.1);
    let status = if residual > params.max_residual {
        TrackStatus::LostResidual
    } else {
        TrackStatus::Alive
    };
    Track { origin: p, position, status }
}

/// Tracks `p` from `img0` into `img1`.
pub fn klt_track<T: Scalar>(img0: &Image<T>, img1: &Image<T>, p: (f64, f64), params: &KltParams) -> Result<Track> {
    if img0.dims() != img1.dims() {
        return Err(Error::Dimension { expected: img0.dims(), found: img1.dims() });
    }
    let f0 = KltFrame::new(img0, params)?;
    let f1 = KltFrame::new(img1, params)?;
    Ok(klt_track_frames(&f0, &f1, p, params))
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Labels each match by tracking both endpoints into the other image: inlier
/// if both tracks survive and land within the bound of their partner,
/// unlabeled if either track leaves the image, outlier otherwise.
pub fn label_matches_klt_frames<T: Scalar>(
    f0: &KltFrame,
    f1: &KltFrame,
    p0: &InterestPointSet<T>,
    p1: &InterestPointSet<T>,
    matches: &MatchSet,
    params: &KltParams,
) -> Result<LabeledMatches> {
    let mut labels = Vec::with_capacity(matches.len());
    for m in matches {
        if m.idx0 >= p0.len() || m.idx1 >= p1.len() {
            return Err(Error::InvalidArgument(format!(
                "match ({}, {}) out of range ({}, {})",
                m.idx0,
                m.idx1,
                p0.len(),
                p1.len()
            )));
        }
        let a = p0.get(m.idx0);
        let b = p1.get(m.idx1);
        let (a, b) = ((a.x as f64, a.y as f64), (b.x as f64, b.y as f64));
        let fwd = klt_track_frames(f0, f1, a, params);
        let bwd = klt_track_frames(f1, f0, b, params);
        let label = if fwd.status == TrackStatus::LostBorder || bwd.status == TrackStatus::LostBorder {
            Label::Unlabeled
        } else if fwd.is_alive()
            && bwd.is_alive()
            && dist(fwd.position, b) < params.inlier_distance
            && dist(bwd.position, a) < params.inlier_distance
        {
            Label::Inlier
        } else {
            Label::Outlier
        };
        labels.push(label);
    }
    LabeledMatches::new(matches.clone(), labels)
}

pub fn label_matches_klt<T: Scalar>(
    img0: &Image<T>,
    img1: &Image<T>,
    p0: &InterestPointSet<T>,
    p1: &InterestPointSet<T>,
    matches: &MatchSet,
    params: &KltParams,
) -> Result<LabeledMatches> {
    if img0.dims() != img1.dims() {
        return Err(Error::Dimension { expected: img0.dims(), found: img1.dims() });
    }
    let f0 = KltFrame::new(img0, params)?;
    let f1 = KltFrame::new(img1, params)?;
    label_matches_klt_frames(&f0, &f1, p0, p1, matches, params)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub idx0: usize,
    pub idx1: usize,
    pub overlap: f64,
}

/// `idx0,idx1,overlap` rows under a header line.
pub fn format_pairs_csv(pairs: &[TrainingPair]) -> String {
    let mut out = String::from("idx0,idx1,overlap\n");
    for p in pairs {
        out.push_str(&format!("{},{},{}\n", p.idx0, p.idx1, p.overlap));
    }
    out
}

/// Inverse of [`format_pairs_csv`]; the header line is optional.
pub fn parse_pairs_csv(text: &str) -> Result<Vec<TrainingPair>> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with("idx0")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || Error::Parse(format!("pairs line {}: expected idx0,idx1,overlap, got '{line}'", n + 1));
        if fields.len() != 3 {
            return Err(bad());
        }
        pairs.push(TrainingPair {
            idx0: fields[0].parse().map_err(|_| bad())?,
            idx1: fields[1].parse().map_err(|_| bad())?,
            overlap: fields[2].parse().map_err(|_| bad())?,
        });
    }
    Ok(pairs)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairSelectionParams {
    /// Minimum fraction of tracks alive at `idx0` that survive to `idx1`.
    pub overlap: f64,
    /// Size of the persistent track pool.
    pub n_sel: usize,
    pub fast_threshold: f64,
    /// New corners must lie farther than this from every live track.
    pub nms_radius: f64,
    pub max_redraws: usize,
    pub klt: KltParams,
}

impl Default for PairSelectionParams {
    fn default() -> Self {
        Self {
            overlap: 0.5,
            n_sel: 500,
            fast_threshold: 0.05,
            nms_radius: 5.0,
            max_redraws: 100,
            klt: KltParams::default(),
        }
    }
}

/// Lifetime of one pooled track: first and last frame it was alive in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrackSpan {
    pub birth: usize,
    pub last: usize,
}

/// Runs the persistent tracker over the whole sequence.
pub fn track_sequence<T: Scalar>(frames: &[Image<T>], params: &PairSelectionParams) -> Result<Vec<TrackSpan>> {
    if frames.len() < 2 {
        return Err(Error::Insufficient("pair selection needs at least 2 frames".into()));
    }
    if params.n_sel == 0 {
        return Err(Error::InvalidArgument("n_sel must be positive".into()));
    }
    let half = (params.klt.window / 2) as f64;
    let mut spans: Vec<TrackSpan> = Vec::new();
    // (span index, position) of live tracks
    let mut live: Vec<(usize, (f64, f64))> = Vec::new();
    let mut prev: Option<KltFrame> = None;
    for (t, img) in frames.iter().enumerate() {
        let frame = KltFrame::new(img, &params.klt)?;
        if let Some(prev) = &prev {
            if frame.dims() != prev.dims() {
                return Err(Error::Dimension { expected: prev.dims(), found: frame.dims() });
            }
            live.retain_mut(|(span, pos)| {
                let tr = klt_track_frames(prev, &frame, *pos, &params.klt);
                if tr.is_alive() {
                    *pos = tr.position;
                    spans[*span].last = t;
                    true
                } else {
                    false
                }
            });
        }
        if live.len() < params.n_sel {
            let mut score = fast_score(img, params.fast_threshold)?.cast::<f64>();
            let (w, h) = score.dims();
            let r = params.nms_radius;
            for &(_, (px, py)) in &live {
                let (x0, x1) = ((px - r).floor().max(0.0) as usize, ((px + r).ceil() as usize).min(w - 1));
                let (y0, y1) = ((py - r).floor().max(0.0) as usize, ((py + r).ceil() as usize).min(h - 1));
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        if dist((x as f64, y as f64), (px, py)) <= r {
                            score.set(x, y, 0.0);
                        }
                    }
                }
            }
            let fresh = nms_select(&score, params.n_sel - live.len(), r)?;
            for p in fresh.points() {
                let pos = (p.x as f64, p.y as f64);
                if p.score <= 0.0 || !window_inside(pos.0, pos.1, half, w, h) {
                    continue;
                }
                spans.push(TrackSpan { birth: t, last: t });
                live.push((spans.len() - 1, pos));
            }
        }
        prev = Some(frame);
    }
    Ok(spans)
}

/// Fraction of the tracks alive in frame `i` that are still alive in frame `j`.
pub fn track_overlap(spans: &[TrackSpan], i: usize, j: usize) -> f64 {
    let alive = spans.iter().filter(|s| s.birth <= i && s.last >= i).count();
    if alive == 0 {
        return 0.0;
    }
    let kept = spans.iter().filter(|s| s.birth <= i && s.last >= j.max(i)).count();
    kept as f64 / alive as f64
}

/// Draws `pairs_wanted` training pairs whose track overlap is at least
/// `params.overlap`; draws with no qualifying partner are retried a bounded
/// number of times and then skipped.
pub fn select_training_pairs<T: Scalar>(
    frames: &[Image<T>],
    params: &PairSelectionParams,
    seed: u64,
    pairs_wanted: usize,
) -> Result<Vec<TrainingPair>> {
    if !(params.overlap > 0.0 && params.overlap < 1.0) {
        return Err(Error::InvalidArgument(format!("overlap {} must lie in (0, 1)", params.overlap)));
    }
    let spans = track_sequence(frames, params)?;
    let n = frames.len();
    let table: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            (i + 1..n)
                .map(|j| (j, track_overlap(&spans, i, j)))
                .filter(|&(_, o)| o >= params.overlap)
                .collect()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(pairs_wanted);
    for _ in 0..pairs_wanted {
        for _ in 0..=params.max_redraws {
            let i = rng.random_range(0..n - 1);
            if table[i].is_empty() {
                continue;
            }
            let (j, overlap) = table[i][rng.random_range(0..table[i].len())];
            out.push(TrainingPair { idx0: i, idx1: j, overlap });
            break;
        }
    }
    Ok(out)
}

/// Smooth random texture in [0, 1] suitable for tracking tests.
#[cfg(test)]
pub(crate) fn test_texture(w: usize, h: usize, seed: u64) -> Image<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Image::from_fn(w, h, |_, _| rng.random::<f64>());
    let blurred = crate::filter::gaussian_blur(&noise, 1.5);
    let (lo, hi) = (blurred.min_value(), blurred.max_value());
    blurred.map(|v| (v - lo) / (hi - lo))
}
