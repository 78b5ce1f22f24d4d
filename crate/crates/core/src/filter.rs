//! Linear filtering, image gradients and Gaussian pyramids.
//!
//! Every filter here replicates edge pixels for out-of-range reads.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::{lit, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvMode {
    /// Only positions where the kernel fits; each side shrinks by `kernel_side - 1`.
    Valid,
    /// Output has the input's size; reads past the border replicate the edge.
    SameReplicate,
}

/// Applies `kernel` centered on each output pixel (correlation form: the
/// kernel is not flipped).
pub fn convolve2d<T: Scalar>(img: &Image<T>, kernel: &Image<T>, mode: ConvMode) -> Result<Image<T>> {
    let (kw, kh) = kernel.dims();
    if kw % 2 == 0 || kh % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "kernel sides must be odd, got {kw}x{kh}"
        )));
    }
    let (rx, ry) = ((kw / 2) as isize, (kh / 2) as isize);
    match mode {
        ConvMode::Valid => {
            if kw > img.width() || kh > img.height() {
                return Err(Error::InvalidArgument(format!(
                    "kernel {kw}x{kh} larger than image {}x{}",
                    img.width(),
                    img.height()
                )));
            }
            let (ow, oh) = (img.width() - kw + 1, img.height() - kh + 1);
            Ok(Image::from_fn(ow, oh, |x, y| {
                let mut acc = T::zero();
                for ky in 0..kh {
                    let row = (y + ky) * img.width();
                    for kx in 0..kw {
                        acc += kernel.get(kx, ky) * img.data()[row + x + kx];
                    }
                }
                acc
            }))
        }
        ConvMode::SameReplicate => Ok(Image::from_fn(img.width(), img.height(), |x, y| {
            let mut acc = T::zero();
            for ky in 0..kh {
                for kx in 0..kw {
                    let sx = x as isize + kx as isize - rx;
                    let sy = y as isize + ky as isize - ry;
                    acc += kernel.get(kx, ky) * img.get_clamped(sx, sy);
                }
            }
            acc
        })),
    }
}

/// Central-difference gradients `(Ix, Iy)` with replicated borders.
pub fn gradients<T: Scalar>(img: &Image<T>) -> Result<(Image<T>, Image<T>)> {
    let (w, h) = img.dims();
    if w < 3 || h < 3 {
        return Err(Error::InvalidArgument(format!(
            "gradients need at least 3x3 pixels, got {w}x{h}"
        )));
    }
    let half = lit::<T>(0.5);
    let ix = Image::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        (img.get_clamped(x + 1, y) - img.get_clamped(x - 1, y)) * half
    });
    let iy = Image::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        (img.get_clamped(x, y + 1) - img.get_clamped(x, y - 1)) * half
    });
    Ok((ix, iy))
}

/// Normalized 1-D Gaussian taps truncated at radius `ceil(3 sigma)`.
pub fn gaussian_taps<T: Scalar>(sigma: f64) -> Vec<T> {
    assert!(sigma > 0.0, "sigma must be positive");
    let radius = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| lit(v / sum)).collect()
}

/// Square 2-D Gaussian kernel (outer product of [`gaussian_taps`]).
pub fn gaussian_kernel<T: Scalar>(sigma: f64) -> Image<T> {
    let taps = gaussian_taps::<T>(sigma);
    let n = taps.len();
    Image::from_fn(n, n, |x, y| taps[x] * taps[y])
}

fn separable<T: Scalar>(img: &Image<T>, taps: &[T]) -> Image<T> {
    let r = (taps.len() / 2) as isize;
    let (w, h) = img.dims();
    let horiz = Image::from_fn(w, h, |x, y| {
        let mut acc = T::zero();
        for (i, &t) in taps.iter().enumerate() {
            acc += t * img.get_clamped(x as isize + i as isize - r, y as isize);
        }
        acc
    });
    Image::from_fn(w, h, |x, y| {
        let mut acc = T::zero();
        for (i, &t) in taps.iter().enumerate() {
            acc += t * horiz.get_clamped(x as isize, y as isize + i as isize - r);
        }
        acc
    })
}

/// Separable Gaussian blur, same size, replicated borders.
pub fn gaussian_blur<T: Scalar>(img: &Image<T>, sigma: f64) -> Image<T> {
    separable(img, &gaussian_taps::<T>(sigma))
}

/// 3x3 mean filter, same size, replicated borders.
pub fn box3<T: Scalar>(img: &Image<T>) -> Image<T> {
    let third = lit::<T>(1.0 / 3.0);
    separable(img, &[third, third, third])
}

/// Sum of `src` over a `window x window` neighborhood (replicated borders).
pub(crate) fn window_sum<T: Scalar>(src: &Image<T>, window: usize) -> Image<T> {
    separable(src, &vec![T::one(); window])
}

/// Gaussian pyramid; level 0 is the input.
#[derive(Clone, Debug)]
pub struct Pyramid<T> {
    levels: Vec<Image<T>>,
}

impl<T: Scalar> Pyramid<T> {
    pub fn levels(&self) -> &[Image<T>] {
        &self.levels
    }

    pub fn level(&self, i: usize) -> &Image<T> {
        &self.levels[i]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

fn halve(n: usize) -> usize {
    n.div_ceil(2)
}

/// Builds `levels` levels, each a blur of the previous one followed by
/// keeping every second pixel.
pub fn gaussian_pyramid<T: Scalar>(img: &Image<T>, levels: usize, sigma: f64) -> Result<Pyramid<T>> {
    if levels == 0 {
        return Err(Error::InvalidArgument("pyramid needs at least one level".into()));
    }
    if sigma <= 0.0 {
        return Err(Error::InvalidArgument("pyramid sigma must be positive".into()));
    }
    let (mut w, mut h) = img.dims();
    for _ in 1..levels {
        w = halve(w);
        h = halve(h);
    }
    if w < 8 || h < 8 {
        return Err(Error::InvalidArgument(format!(
            "{levels} pyramid levels leave a {w}x{h} top level (< 8)"
        )));
    }
    let mut out = Vec::with_capacity(levels);
    out.push(img.clone());
    for _ in 1..levels {
        let prev = out.last().unwrap();
        let blurred = gaussian_blur(prev, sigma);
        let next = Image::from_fn(halve(prev.width()), halve(prev.height()), |x, y| {
            blurred.get(2 * x, 2 * y)
        });
        out.push(next);
    }
    Ok(Pyramid { levels: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> Image<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| rng.random::<f64>())
    }

    #[test]
    fn identity_kernel_is_noop() {
        let img = random_image(7, 5, 1);
        let k = Image::filled(1, 1, 1.0);
        assert_eq!(convolve2d(&img, &k, ConvMode::SameReplicate).unwrap(), img);
    }

    #[test]
    fn box_filter_preserves_constants_in_valid_mode() {
        let img = Image::filled(5, 5, 0.3f64);
        let k = Image::filled(3, 3, 1.0 / 9.0);
        let out = convolve2d(&img, &k, ConvMode::Valid).unwrap();
        assert_eq!(out.dims(), (3, 3));
        assert!(out.data().iter().all(|v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let img = random_image(8, 8, 2);
        let k = random_image(3, 3, 3);
        let valid = convolve2d(&img, &k, ConvMode::Valid).unwrap();
        let same = convolve2d(&img, &k, ConvMode::SameReplicate).unwrap();
        for y in 0..8isize {
            for x in 0..8isize {
                let mut acc = 0.0;
                for j in -1..=1isize {
                    for i in -1..=1isize {
                        let sx = (x + i).clamp(0, 7) as usize;
                        let sy = (y + j).clamp(0, 7) as usize;
                        acc += k.get((i + 1) as usize, (j + 1) as usize) * img.get(sx, sy);
                    }
                }
                assert!((same.get(x as usize, y as usize) - acc).abs() < 1e-12);
                if (1..7).contains(&x) && (1..7).contains(&y) {
                    assert!((valid.get(x as usize - 1, y as usize - 1) - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_errors() {
        let img = Image::filled(4, 4, 0.0f32);
        assert!(convolve2d(&img, &Image::filled(2, 3, 1.0), ConvMode::Valid).is_err());
        assert!(convolve2d(&img, &Image::filled(5, 5, 1.0), ConvMode::Valid).is_err());
        assert!(convolve2d(&img, &Image::filled(5, 5, 1.0), ConvMode::SameReplicate).is_ok());
    }

    #[test]
    fn gradient_of_ramp_and_constant() {
        let w = 10;
        let ramp = Image::<f64>::from_fn(w, 6, |x, _| x as f64 / w as f64);
        let (ix, iy) = gradients(&ramp).unwrap();
        for y in 0..6 {
            for x in 1..w - 1 {
                assert!((ix.get(x, y) - 1.0 / w as f64).abs() < 1e-12);
            }
            for x in 0..w {
                assert_eq!(iy.get(x, y), 0.0);
            }
        }
        let (cx, cy) = gradients(&Image::filled(5, 5, 0.7f32)).unwrap();
        assert!(cx.data().iter().chain(cy.data()).all(|&v| v == 0.0));
        assert!(gradients(&Image::filled(2, 5, 0.0f32)).is_err());
    }

    #[test]
    fn gradients_match_direct_loop() {
        let img = random_image(6, 6, 4);
        let (ix, iy) = gradients(&img).unwrap();
        for y in 0..6usize {
            for x in 0..6usize {
                let xp = (x + 1).min(5);
                let xm = x.saturating_sub(1);
                let yp = (y + 1).min(5);
                let ym = y.saturating_sub(1);
                assert!((ix.get(x, y) - (img.get(xp, y) - img.get(xm, y)) / 2.0).abs() < 1e-15);
                assert!((iy.get(x, y) - (img.get(x, yp) - img.get(x, ym)) / 2.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn separable_blur_equals_full_kernel() {
        let img = random_image(16, 12, 5);
        let a = gaussian_blur(&img, 1.3);
        let b = convolve2d(&img, &gaussian_kernel(1.3), ConvMode::SameReplicate).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn pyramid_sizes_and_constants() {
        let img = Image::filled(64, 64, 0.25f64);
        let p = gaussian_pyramid(&img, 3, 1.0).unwrap();
        let sizes: Vec<_> = p.levels().iter().map(|l| l.width()).collect();
        assert_eq!(sizes, vec![64, 32, 16]);
        for l in p.levels() {
            assert!(l.data().iter().all(|v| (v - 0.25).abs() < 1e-12));
        }
        let single = gaussian_pyramid(&img, 1, 1.0).unwrap();
        assert_eq!(single.level(0), &img);
        assert!(gaussian_pyramid(&img, 5, 1.0).is_err());
        let odd = gaussian_pyramid(&Image::filled(33, 17, 0.0f32), 2, 1.0).unwrap();
        assert_eq!(odd.level(1).dims(), (17, 9));
    }

    proptest! {
        #[test]
        fn convolution_is_linear(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let i1 = random_image(7, 6, seed);
            let i2 = random_image(7, 6, seed + 7919);
            let k = random_image(3, 3, seed + 31);
            let mix = Image::from_fn(7, 6, |x, y| a * i1.get(x, y) + b * i2.get(x, y));
            for mode in [ConvMode::Valid, ConvMode::SameReplicate] {
                let lhs = convolve2d(&mix, &k, mode).unwrap();
                let c1 = convolve2d(&i1, &k, mode).unwrap();
                let c2 = convolve2d(&i2, &k, mode).unwrap();
                for (i, v) in lhs.data().iter().enumerate() {
                    prop_assert!((v - (a * c1.data()[i] + b * c2.data()[i])).abs() < 1e-6);
                }
            }
        }
    }
}
