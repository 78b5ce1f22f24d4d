//! 256-bit intensity-comparison patch descriptors and cross-checked
//! brute-force Hamming matching.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::filter::box3;
use crate::image::Image;
use crate::nms::InterestPointSet;
use crate::scalar::Scalar;

pub const DESCRIPTOR_BITS: usize = 256;
pub const PATTERN_RADIUS: i32 = 15;
/// Points closer than this to any image border are not described.
pub const DESCRIBE_MARGIN: usize = 16;
const PATTERN_SIGMA: f64 = 6.0;

/// Default pattern seed used by the pipeline.
pub const DEFAULT_PATTERN_SEED: u64 = 0x5eed_b1f5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BinaryDescriptor(pub [u64; 4]);

impl BinaryDescriptor {
    #[inline]
    pub fn hamming(&self, other: &Self) -> u32 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    #[inline]
    pub fn bit(&self, b: usize) -> bool {
        (self.0[b / 64] >> (b % 64)) & 1 == 1
    }
}

/// 256 offset pairs within `[-15, 15]^2`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplingPattern {
    pairs: Vec<[(i32, i32); 2]>,
    seed: u64,
}

impl SamplingPattern {
    /// Offsets drawn from an isotropic Gaussian (sigma 6 px), rounded and
    /// clamped to the pattern radius.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, PATTERN_SIGMA).expect("valid sigma");
        let mut draw = || {
            let v: f64 = normal.sample(&mut rng);
            (v.round() as i32).clamp(-PATTERN_RADIUS, PATTERN_RADIUS)
        };
        let pairs = (0..DESCRIPTOR_BITS)
            .map(|_| [(draw(), draw()), (draw(), draw())])
            .collect();
        Self { pairs, seed }
    }

    pub fn pairs(&self) -> &[[(i32, i32); 2]] {
        &self.pairs
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl Default for SamplingPattern {
    fn default() -> Self {
        Self::new(DEFAULT_PATTERN_SEED)
    }
}

/// A descriptor tagged with the index of the point it describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Described {
    pub index: usize,
    pub descriptor: BinaryDescriptor,
}

/// Whether a pixel is far enough from the border to be described.
pub fn describable(x: usize, y: usize, width: usize, height: usize) -> bool {
    x >= DESCRIBE_MARGIN
        && y >= DESCRIBE_MARGIN
        && x + DESCRIBE_MARGIN < width
        && y + DESCRIBE_MARGIN < height
}

/// Describes every point that is at least 16 px from the border; the others
/// are skipped. Bit `b` is set iff the box-smoothed intensity at the first
/// offset of pair `b` is strictly below the one at the second offset.
pub fn describe<T: Scalar>(
    img: &Image<T>,
    points: &InterestPointSet<T>,
    pattern: &SamplingPattern,
) -> Vec<Described> {
    let smooth = box3(img);
    describe_smoothed(&smooth, points, pattern)
}

/// [`describe`] on an image that has already been box-smoothed.
pub fn describe_smoothed<T: Scalar>(
    smooth: &Image<T>,
    points: &InterestPointSet<T>,
    pattern: &SamplingPattern,
) -> Vec<Described> {
    let (w, h) = smooth.dims();
    points
        .points()
        .iter()
        .enumerate()
        .filter(|(_, p)| describable(p.x, p.y, w, h))
        .map(|(index, p)| {
            let mut words = [0u64; 4];
            for (b, [(ax, ay), (bx, by)]) in pattern.pairs().iter().enumerate() {
                let va = smooth.get((p.x as i32 + ax) as usize, (p.y as i32 + ay) as usize);
                let vb = smooth.get((p.x as i32 + bx) as usize, (p.y as i32 + by) as usize);
                if va < vb {
                    words[b / 64] |= 1 << (b % 64);
                }
            }
            Described {
                index,
                descriptor: BinaryDescriptor(words),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Match {
    /// Index into the image-0 point set.
    pub idx0: usize,
    /// Index into the image-1 point set.
    pub idx1: usize,
    pub distance: u32,
}

pub type MatchSet = Vec<Match>;

fn nearest(query: &BinaryDescriptor, pool: &[Described]) -> Option<(usize, u32)> {
    let mut best: Option<(usize, u32)> = None;
    for (i, d) in pool.iter().enumerate() {
        let dist = query.hamming(&d.descriptor);
        if best.is_none_or(|(_, bd)| dist < bd) {
            best = Some((i, dist));
        }
    }
    best
}

/// Mutual nearest neighbours under Hamming distance; argmin ties go to the
/// earlier entry. Output is ordered by position in `d0`.
pub fn match_brute_force(d0: &[Described], d1: &[Described]) -> MatchSet {
    if d0.is_empty() || d1.is_empty() {
        return Vec::new();
    }
    let back: Vec<usize> = d1
        .iter()
        .map(|d| nearest(&d.descriptor, d0).expect("d0 non-empty").0)
        .collect();
    d0.iter()
        .enumerate()
        .filter_map(|(i, d)| {
            let (j, dist) = nearest(&d.descriptor, d1)?;
            (back[j] == i).then_some(Match {
                idx0: d.index,
                idx1: d1[j].index,
                distance: dist,
            })
        })
        .collect()
}
