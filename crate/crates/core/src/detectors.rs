//! Hand-crafted per-pixel scoring functions. Any of them can take the place of
//! the learned score network in the pipeline; their outputs are only used for
//! ranking, so they are not normalized.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{gaussian_blur, gradients, window_sum};
use crate::image::Image;
use crate::io::load_score_png;
use crate::scalar::{lit, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Harris,
    #[serde(rename = "shitomasi")]
    ShiTomasi,
    Fast,
    #[serde(rename = "dog")]
    DoG,
    External,
    Network,
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "harris" => Ok(Self::Harris),
            "shitomasi" | "shi-tomasi" => Ok(Self::ShiTomasi),
            "fast" => Ok(Self::Fast),
            "dog" => Ok(Self::DoG),
            "external" => Ok(Self::External),
            "network" => Ok(Self::Network),
            other => Err(Error::Parse(format!("unknown detector '{other}'"))),
        }
    }
}

impl std::fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::Harris => "harris",
            Self::ShiTomasi => "shitomasi",
            Self::Fast => "fast",
            Self::DoG => "dog",
            Self::External => "external",
            Self::Network => "network",
        };
        f.write_str(s)
    }
}

/// Parameters of the classic detectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassicParams {
    pub harris_window: usize,
    pub harris_kappa: f64,
    pub fast_threshold: f64,
    pub dog_sigma: f64,
    pub dog_k: f64,
}

impl Default for ClassicParams {
    fn default() -> Self {
        Self {
            harris_window: 3,
            harris_kappa: 0.04,
            fast_threshold: 0.05,
            dog_sigma: 1.0,
            dog_k: 1.6,
        }
    }
}

impl ClassicParams {
    /// Scores `img` with one of the classic detectors. External and network
    /// scores are not computed here.
    pub fn score<T: Scalar>(&self, kind: DetectorKind, img: &Image<T>) -> Result<Image<T>> {
        match kind {
            DetectorKind::Harris => harris_score(img, self.harris_window, self.harris_kappa),
            DetectorKind::ShiTomasi => shi_tomasi_score(img, self.harris_window),
            DetectorKind::Fast => fast_score(img, self.fast_threshold),
            DetectorKind::DoG => dog_score(img, self.dog_sigma, self.dog_k),
            DetectorKind::External | DetectorKind::Network => Err(Error::InvalidArgument(
                format!("{kind} is not a classic detector"),
            )),
        }
    }
}

/// Window-summed structure tensor entries `(Σ Ix², Σ IxIy, Σ Iy²)`.
fn structure_tensor<T: Scalar>(img: &Image<T>, window: usize) -> Result<[Image<T>; 3]> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "window must be odd and >= 3, got {window}"
        )));
    }
    if img.width() < window || img.height() < window {
        return Err(Error::InvalidArgument(format!(
            "image {}x{} smaller than window {window}",
            img.width(),
            img.height()
        )));
    }
    let (ix, iy) = gradients(img)?;
    let xx = Image::from_fn(img.width(), img.height(), |x, y| ix.get(x, y) * ix.get(x, y));
    let xy = Image::from_fn(img.width(), img.height(), |x, y| ix.get(x, y) * iy.get(x, y));
    let yy = Image::from_fn(img.width(), img.height(), |x, y| iy.get(x, y) * iy.get(x, y));
    Ok([
        window_sum(&xx, window),
        window_sum(&xy, window),
        window_sum(&yy, window),
    ])
}

/// `det(M) - kappa * trace(M)^2` of the uniformly weighted structure tensor.
pub fn harris_score<T: Scalar>(img: &Image<T>, window: usize, kappa: f64) -> Result<Image<T>> {
    if !(0.02..=0.3).contains(&kappa) {
        return Err(Error::InvalidArgument(format!(
            "harris kappa {kappa} outside [0.02, 0.3]"
        )));
    }
    let [a, b, c] = structure_tensor(img, window)?;
    let kappa = lit::<T>(kappa);
    Ok(Image::from_fn(img.width(), img.height(), |x, y| {
        let (a, b, c) = (a.get(x, y), b.get(x, y), c.get(x, y));
        let tr = a + c;
        a * c - b * b - kappa * tr * tr
    }))
}

/// Smaller eigenvalue of the uniformly weighted structure tensor.
pub fn shi_tomasi_score<T: Scalar>(img: &Image<T>, window: usize) -> Result<Image<T>> {
    let [a, b, c] = structure_tensor(img, window)?;
    let half = lit::<T>(0.5);
    Ok(Image::from_fn(img.width(), img.height(), |x, y| {
        let (a, b, c) = (a.get(x, y), b.get(x, y), c.get(x, y));
        let mean = (a + c) * half;
        let d = (a - c) * half;
        mean - (d * d + b * b).sqrt()
    }))
}

/// Bresenham circle of radius 3, clockwise from 12 o'clock.
pub(crate) const FAST_CIRCLE: [(isize, isize); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

const FAST_ARC: usize = 9;
const FAST_BISECTION_STEPS: usize = 30;

/// Segment test: 9 contiguous circle pixels all brighter than `center + t`
/// or all darker than `center - t`.
fn segment_test<T: Scalar>(center: T, ring: &[T; 16], t: T) -> bool {
    let mut bright_run = 0;
    let mut dark_run = 0;
    for i in 0..16 + FAST_ARC - 1 {
        let v = ring[i % 16];
        if v > center + t {
            bright_run += 1;
            dark_run = 0;
        } else if v < center - t {
            dark_run += 1;
            bright_run = 0;
        } else {
            bright_run = 0;
            dark_run = 0;
        }
        if bright_run >= FAST_ARC || dark_run >= FAST_ARC {
            return true;
        }
    }
    false
}

/// FAST-9 score: for pixels passing the segment test at `threshold`, the
/// largest threshold for which they still pass (found by bisection); zero
/// elsewhere and in the 3-pixel border band.
pub fn fast_score<T: Scalar>(img: &Image<T>, threshold: f64) -> Result<Image<T>> {
    let (w, h) = img.dims();
    if w < 7 || h < 7 {
        return Err(Error::InvalidArgument(format!(
            "FAST needs at least 7x7 pixels, got {w}x{h}"
        )));
    }
    let t0 = lit::<T>(threshold);
    let span = img.max_value() - img.min_value();
    let mut out = Image::zeros(w, h);
    let mut ring = [T::zero(); 16];
    for y in 3..h - 3 {
        for x in 3..w - 3 {
            let center = img.get(x, y);
            for (slot, (dx, dy)) in ring.iter_mut().zip(FAST_CIRCLE) {
                *slot = img.get((x as isize + dx) as usize, (y as isize + dy) as usize);
            }
            if !segment_test(center, &ring, t0) {
                continue;
            }
            // The test never passes at t >= span.
            let (mut lo, mut hi) = (t0, span.max(t0));
            for _ in 0..FAST_BISECTION_STEPS {
                let mid = (lo + hi) * lit(0.5);
                if segment_test(center, &ring, mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            out.set(x, y, lo);
        }
    }
    Ok(out)
}

/// Absolute difference of Gaussians `|G(k sigma) * I - G(sigma) * I|`.
pub fn dog_score<T: Scalar>(img: &Image<T>, sigma: f64, k: f64) -> Result<Image<T>> {
    if sigma <= 0.0 || k <= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "DoG needs sigma > 0 and k > 1, got sigma={sigma}, k={k}"
        )));
    }
    let narrow = gaussian_blur(img, sigma);
    let wide = gaussian_blur(img, k * sigma);
    Ok(Image::from_fn(img.width(), img.height(), |x, y| {
        (wide.get(x, y) - narrow.get(x, y)).abs()
    }))
}

/// Loads a score map produced elsewhere and checks it against the image it scores.
pub fn load_external_scoremap<T: Scalar>(
    path: impl AsRef<Path>,
    expected: (usize, usize),
) -> Result<Image<T>> {
    let map = load_score_png(path)?;
    if map.dims() != expected {
        return Err(Error::Dimension {
            expected,
            found: map.dims(),
        });
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{convolve2d, gaussian_kernel, ConvMode};
    use crate::io::save_png16;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> Image<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| rng.random::<f64>() * 0.8)
    }

    fn checkerboard() -> Image<f64> {
        Image::from_fn(16, 16, |x, y| if (x / 8 + y / 8) % 2 == 0 { 0.0 } else { 1.0 })
    }

    /// Structure tensor of one pixel by explicit summation over the window.
    fn tensor_oracle(img: &Image<f64>, x: usize, y: usize, window: usize) -> (f64, f64, f64) {
        let r = (window / 2) as isize;
        let g = |x: isize, y: isize| {
            let gx = (img.get_clamped(x + 1, y) - img.get_clamped(x - 1, y)) / 2.0;
            let gy = (img.get_clamped(x, y + 1) - img.get_clamped(x, y - 1)) / 2.0;
            (gx, gy)
        };
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for j in -r..=r {
            for i in -r..=r {
                let sx = (x as isize + i).clamp(0, img.width() as isize - 1);
                let sy = (y as isize + j).clamp(0, img.height() as isize - 1);
                let (gx, gy) = g(sx, sy);
                a += gx * gx;
                b += gx * gy;
                c += gy * gy;
            }
        }
        (a, b, c)
    }

    #[test]
    fn constant_images_score_zero() {
        let img = Image::filled(12, 12, 0.4f64);
        for kind in [DetectorKind::Harris, DetectorKind::ShiTomasi, DetectorKind::Fast, DetectorKind::DoG] {
            let s = ClassicParams::default().score(kind, &img).unwrap();
            assert_eq!(s.dims(), img.dims());
            assert!(s.data().iter().all(|v| v.abs() < 1e-12), "{kind}");
        }
    }

    #[test]
    fn harris_matches_tensor_oracle_and_peaks_at_checker_corner() {
        let img = checkerboard();
        let s = harris_score(&img, 3, 0.04).unwrap();
        let mut best = (0, 0, f64::NEG_INFINITY);
        for y in 0..16 {
            for x in 0..16 {
                let (a, b, c) = tensor_oracle(&img, x, y, 3);
                let oracle = a * c - b * b - 0.04 * (a + c) * (a + c);
                assert!((s.get(x, y) - oracle).abs() < 1e-12);
                if oracle > best.2 {
                    best = (x, y, oracle);
                }
            }
        }
        assert!((7..=8).contains(&best.0) && (7..=8).contains(&best.1), "{best:?}");
        let (ax, ay) = s.argmax();
        assert!((7..=8).contains(&ax) && (7..=8).contains(&ay));
    }

    #[test]
    fn harris_nonpositive_on_step_edge() {
        let img = Image::<f64>::from_fn(16, 16, |x, _| if x < 8 { 0.0 } else { 1.0 });
        let s = harris_score(&img, 3, 0.04).unwrap();
        for y in 0..16 {
            for x in 5..11 {
                assert!(s.get(x, y) <= 1e-12);
            }
        }
    }

    #[test]
    fn shi_tomasi_eigen_oracle() {
        let img = checkerboard();
        let s = shi_tomasi_score(&img, 3).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                let (a, b, c) = tensor_oracle(&img, x, y, 3);
                let m = nalgebra::Matrix2::new(a, b, b, c);
                let eig = m.symmetric_eigenvalues();
                assert!((s.get(x, y) - eig.min()).abs() < 1e-9);
            }
        }
        let (ax, ay) = s.argmax();
        assert!((7..=8).contains(&ax) && (7..=8).contains(&ay));
        let edge = Image::<f64>::from_fn(16, 16, |x, _| if x < 8 { 0.0 } else { 1.0 });
        let e = shi_tomasi_score(&edge, 3).unwrap();
        assert!(e.data().iter().all(|v| v.abs() < 1e-12));
    }

    /// Exact FAST score: best over arcs of the weakest circle difference.
    fn fast_oracle(img: &Image<f64>, x: usize, y: usize) -> f64 {
        let p = img.get(x, y);
        let ring: Vec<f64> = FAST_CIRCLE
            .iter()
            .map(|(dx, dy)| img.get((x as isize + dx) as usize, (y as isize + dy) as usize))
            .collect();
        let mut best = f64::NEG_INFINITY;
        for start in 0..16 {
            let arc: Vec<f64> = (0..9).map(|i| ring[(start + i) % 16]).collect();
            let bright = arc.iter().map(|c| c - p).fold(f64::INFINITY, f64::min);
            let dark = arc.iter().map(|c| p - c).fold(f64::INFINITY, f64::min);
            best = best.max(bright).max(dark);
        }
        best
    }

    #[test]
    fn fast_single_bright_pixel() {
        let mut img = Image::zeros(15, 15);
        img.set(7, 7, 1.0f64);
        let s = fast_score(&img, 0.1).unwrap();
        assert!(s.get(7, 7) > 0.1);
        assert!((s.get(7, 7) - fast_oracle(&img, 7, 7)).abs() < 1e-6);
        assert_eq!(s.argmax(), (7, 7));
    }

    #[test]
    fn fast_ramp_has_no_corners_and_border_is_zero() {
        let img = Image::<f64>::from_fn(20, 20, |x, _| x as f64 / 20.0);
        let s = fast_score(&img, 0.2).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0));
        let r = random_image(20, 20, 9);
        let s = fast_score(&r, 0.05).unwrap();
        for y in 0..20 {
            for x in 0..20 {
                let border = x < 3 || y < 3 || x >= 17 || y >= 17;
                if border {
                    assert_eq!(s.get(x, y), 0.0);
                } else if s.get(x, y) > 0.0 {
                    assert!((s.get(x, y) - fast_oracle(&r, x, y)).abs() < 1e-6);
                } else {
                    assert!(fast_oracle(&r, x, y) <= 0.05);
                }
            }
        }
        assert!(fast_score(&Image::<f64>::zeros(6, 9), 0.1).is_err());
    }

    #[test]
    fn dog_matches_two_blurs() {
        let img = random_image(16, 16, 3);
        let s = dog_score(&img, 1.0, 1.6).unwrap();
        let a = convolve2d(&img, &gaussian_kernel(1.6), ConvMode::SameReplicate).unwrap();
        let b = convolve2d(&img, &gaussian_kernel(1.0), ConvMode::SameReplicate).unwrap();
        for i in 0..s.data().len() {
            assert!((s.data()[i] - (a.data()[i] - b.data()[i]).abs()).abs() < 1e-12);
        }
        let mut dot = Image::zeros(21, 21);
        dot.set(10, 10, 1.0f64);
        assert_eq!(dog_score(&dot, 1.0, 1.6).unwrap().argmax(), (10, 10));
    }

    #[test]
    fn scores_are_invariant_to_brightness_offset() {
        let img = random_image(24, 24, 11);
        let shifted = img.map(|v| v + 0.1);
        for kind in [DetectorKind::Harris, DetectorKind::ShiTomasi, DetectorKind::Fast, DetectorKind::DoG] {
            let a = ClassicParams::default().score(kind, &img).unwrap();
            let b = ClassicParams::default().score(kind, &shifted).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-6, "{kind}");
            }
        }
    }

    #[test]
    fn parameter_validation() {
        let img = Image::<f64>::zeros(10, 10);
        assert!(harris_score(&img, 4, 0.04f64.max(0.04)).is_err());
        assert!(harris_score(&img, 3, 0.5).is_err());
        assert!(harris_score(&Image::<f64>::zeros(2, 10), 3, 0.04).is_err());
        assert!(dog_score(&img, 1.0, 1.0).is_err());
    }

    #[test]
    fn external_map_round_trip_and_size_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.png");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let map = Image::<f64>::from_fn(9, 7, |_, _| rng.random_range(0..=65535u32) as f64 / 65535.0);
        save_png16(&map, &path).unwrap();
        let back: Image<f64> = load_external_scoremap(&path, (9, 7)).unwrap();
        assert_eq!(back, map);
        assert!(matches!(
            load_external_scoremap::<f64>(&path, (7, 9)),
            Err(Error::Dimension { .. })
        ));
        let half = Image::new(1, 1, vec![32768.0 / 65535.0]).unwrap();
        save_png16(&half, &path).unwrap();
        let v: Image<f64> = load_external_scoremap(&path, (1, 1)).unwrap();
        assert_eq!(v.get(0, 0), 32768.0 / 65535.0);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("DoG".parse::<DetectorKind>().unwrap(), DetectorKind::DoG);
        assert_eq!("shitomasi".parse::<DetectorKind>().unwrap(), DetectorKind::ShiTomasi);
        assert!("sift".parse::<DetectorKind>().is_err());
    }
}
