//! Reinforcement and rank losses on a score map, and their gradients.
//!
//! For image `i` of a pair, with inliers `I` and outliers `O`:
//!
//! * reinforcement: `1 - S(p)` for inlier points, `S(p)` for outlier points;
//! * rank: `(S(p) - S(q))^2` for inlier points, where `q` is the point of
//!   image `i` holding the rank that `p`'s match holds in the other image;
//! * total: `sum(reinforcement) / (|I| + |O|) + sum(rank) / |I|`.
//!
//! Rankings and rank targets are fixed by the extraction and treated as
//! constants when differentiating.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::labels::{Label, LabeledMatches};
use crate::nms::InterestPointSet;
use crate::scalar::{lit, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Zero,
    One,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown<T> {
    /// Indexed by point index in the scored image.
    pub reinforcement: Vec<T>,
    pub rank: Vec<T>,
    pub total: T,
    pub num_inliers: usize,
    pub num_outliers: usize,
}

#[derive(Clone, Copy, Debug)]
struct InlierTerm {
    point: usize,
    target: usize,
}

/// The label- and rank-dependent structure of the loss for one image,
/// independent of the score values.
#[derive(Clone, Debug)]
pub struct LossPlan {
    pixels: Vec<(usize, usize)>,
    width: usize,
    height: usize,
    /// `(point index, is inlier)` for every labeled match.
    labeled: Vec<(usize, bool)>,
    inliers: Vec<InlierTerm>,
}

impl LossPlan {
    /// `points` belong to the scored image, `other` to the partner image;
    /// `side` says which match index refers to `points`.
    pub fn new<T: Scalar>(
        points: &InterestPointSet<T>,
        other: &InterestPointSet<T>,
        labels: &LabeledMatches,
        side: Side,
        dims: (usize, usize),
    ) -> Result<Self> {
        let own_ranks = points.ranks();
        let mut by_rank = vec![0; points.len()];
        for (i, &r) in own_ranks.iter().enumerate() {
            by_rank[r - 1] = i;
        }
        let other_ranks = other.ranks();
        let mut labeled = Vec::new();
        let mut inliers = Vec::new();
        for (m, label) in labels.iter() {
            let (own, partner) = match side {
                Side::Zero => (m.idx0, m.idx1),
                Side::One => (m.idx1, m.idx0),
            };
            if own >= points.len() || partner >= other.len() {
                return Err(Error::InvalidArgument(format!(
                    "match ({}, {}) references a missing point",
                    m.idx0, m.idx1
                )));
            }
            match label {
                Label::Unlabeled => continue,
                Label::Outlier => labeled.push((own, false)),
                Label::Inlier => {
                    labeled.push((own, true));
                    let r = other_ranks[partner];
                    if r > points.len() {
                        return Err(Error::InvalidArgument(format!(
                            "partner rank {r} exceeds the {} points of this image; extract the same n in both",
                            points.len()
                        )));
                    }
                    inliers.push(InlierTerm { point: own, target: by_rank[r - 1] });
                }
            }
        }
        let pixels = points.points().iter().map(|p| (p.x, p.y)).collect();
        Ok(Self {
            pixels,
            width: dims.0,
            height: dims.1,
            labeled,
            inliers,
        })
    }

    pub fn num_inliers(&self) -> usize {
        self.inliers.len()
    }

    pub fn num_outliers(&self) -> usize {
        self.labeled.len() - self.inliers.len()
    }

    fn check<T: Scalar>(&self, score: &Image<T>) -> Result<()> {
        if score.dims() != (self.width, self.height) {
            return Err(Error::Dimension { expected: (self.width, self.height), found: score.dims() });
        }
        if self.labeled.is_empty() {
            return Err(Error::Insufficient("no labeled matches; the loss is undefined".into()));
        }
        for &(p, _) in &self.labeled {
            let (x, y) = self.pixels[p];
            let s = score.get(x, y);
            if !(s >= T::zero() && s <= T::one()) {
                return Err(Error::InvalidArgument(format!("score {s} at ({x}, {y}) outside [0, 1]")));
            }
        }
        Ok(())
    }

    fn s<T: Scalar>(&self, score: &Image<T>, point: usize) -> T {
        let (x, y) = self.pixels[point];
        score.get(x, y)
    }

    pub fn reinforcement<T: Scalar>(&self, score: &Image<T>) -> Vec<T> {
        let mut terms = vec![T::zero(); self.pixels.len()];
        for &(p, inlier) in &self.labeled {
            let s = self.s(score, p);
            terms[p] = if inlier { T::one() - s } else { s };
        }
        terms
    }

    pub fn rank<T: Scalar>(&self, score: &Image<T>) -> Vec<T> {
        let mut terms = vec![T::zero(); self.pixels.len()];
        for t in &self.inliers {
            let d = self.s(score, t.point) - self.s(score, t.target);
            terms[t.point] = d * d;
        }
        terms
    }

    pub fn evaluate<T: Scalar>(&self, score: &Image<T>) -> Result<LossBreakdown<T>> {
        self.check(score)?;
        let reinforcement = self.reinforcement(score);
        let rank = self.rank(score);
        let total = combine(&reinforcement, &rank, self.num_inliers(), self.num_outliers())?;
        Ok(LossBreakdown {
            reinforcement,
            rank,
            total,
            num_inliers: self.num_inliers(),
            num_outliers: self.num_outliers(),
        })
    }

    /// Dense `dL/dS`; zero except at point pixels and rank-target pixels.
    pub fn gradient<T: Scalar>(&self, score: &Image<T>) -> Result<Image<T>> {
        self.check(score)?;
        let mut grad = Image::zeros(self.width, self.height);
        let norm = lit::<T>(1.0 / self.labeled.len() as f64);
        for &(p, inlier) in &self.labeled {
            let (x, y) = self.pixels[p];
            let g = grad.get(x, y) + if inlier { -norm } else { norm };
            grad.set(x, y, g);
        }
        if !self.inliers.is_empty() {
            let two_over_i = lit::<T>(2.0 / self.inliers.len() as f64);
            for t in &self.inliers {
                let d = two_over_i * (self.s(score, t.point) - self.s(score, t.target));
                let (px, py) = self.pixels[t.point];
                grad.set(px, py, grad.get(px, py) + d);
                let (qx, qy) = self.pixels[t.target];
                grad.set(qx, qy, grad.get(qx, qy) - d);
            }
        }
        Ok(grad)
    }
}

/// Combines per-point terms; the rank sum counts as zero without inliers.
pub fn combine<T: Scalar>(reinforcement: &[T], rank: &[T], num_inliers: usize, num_outliers: usize) -> Result<T> {
    let labeled = num_inliers + num_outliers;
    if labeled == 0 {
        return Err(Error::Insufficient("no labeled matches; the loss is undefined".into()));
    }
    let re: T = reinforcement.iter().copied().sum();
    let mut total = re / lit::<T>(labeled as f64);
    if num_inliers > 0 {
        let rk: T = rank.iter().copied().sum();
        total += rk / lit::<T>(num_inliers as f64);
    }
    Ok(total)
}

pub fn reinforcement_loss<T: Scalar>(
    score: &Image<T>,
    points: &InterestPointSet<T>,
    other: &InterestPointSet<T>,
    labels: &LabeledMatches,
    side: Side,
) -> Result<Vec<T>> {
    let plan = LossPlan::new(points, other, labels, side, score.dims())?;
    if !score.is_unit_range() {
        return Err(Error::InvalidArgument("score map outside [0, 1]".into()));
    }
    Ok(plan.reinforcement(score))
}

pub fn rank_loss<T: Scalar>(
    score: &Image<T>,
    points: &InterestPointSet<T>,
    other: &InterestPointSet<T>,
    labels: &LabeledMatches,
    side: Side,
) -> Result<Vec<T>> {
    let plan = LossPlan::new(points, other, labels, side, score.dims())?;
    Ok(plan.rank(score))
}

pub fn total_loss<T: Scalar>(
    score: &Image<T>,
    points: &InterestPointSet<T>,
    other: &InterestPointSet<T>,
    labels: &LabeledMatches,
    side: Side,
) -> Result<LossBreakdown<T>> {
    LossPlan::new(points, other, labels, side, score.dims())?.evaluate(score)
}

pub fn loss_gradient<T: Scalar>(
    score: &Image<T>,
    points: &InterestPointSet<T>,
    other: &InterestPointSet<T>,
    labels: &LabeledMatches,
    side: Side,
) -> Result<Image<T>> {
    LossPlan::new(points, other, labels, side, score.dims())?.gradient(score)
}
