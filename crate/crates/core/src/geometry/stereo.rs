use crate::error::{Error, Result};
use crate::filter::window_sum;
use crate::geometry::CameraIntrinsics;
use crate::image::Image;
use crate::scalar::Scalar;

/// Winner-take-all SAD disparity per pixel, ties to the smaller disparity.
/// `shift` maps a pixel column to the partner column in the other image for
/// disparity `d`; partners whose block leaves the image are not candidates.
fn wta<T: Scalar>(
    a: &Image<T>,
    b: &Image<T>,
    block: usize,
    max_d: usize,
    left_reference: bool,
) -> Vec<Option<usize>> {
    let (w, h) = a.dims();
    let half = block / 2;
    let mut best: Vec<(Option<usize>, f64)> = vec![(None, f64::INFINITY); w * h];
    for d in 0..=max_d.min(w.saturating_sub(1)) {
        let diff = Image::from_fn(w, h, |x, y| {
            let xo = if left_reference { x as isize - d as isize } else { (x + d) as isize };
            (a.get(x, y) - b.get_clamped(xo, y as isize)).abs()
        });
        let sad = window_sum(&diff, block);
        for y in 0..h {
            for x in 0..w {
                let (lo, hi) = if left_reference {
                    (x as isize - d as isize - half as isize, x + half)
                } else {
                    (x as isize - half as isize, x + d + half)
                };
                if lo < 0 || hi >= w {
                    continue;
                }
                let cost = sad.get(x, y).to_f64_lossy();
                let slot = &mut best[y * w + x];
                if cost < slot.1 {
                    *slot = (Some(d), cost);
                }
            }
        }
    }
    best.into_iter().map(|(d, _)| d).collect()
}

/// Depth in meters from a rectified stereo pair by SAD block matching along
/// rows, with a left-right consistency check (1 px). Invalid pixels are 0.
pub fn stereo_block_match<T: Scalar>(
    left: &Image<T>,
    right: &Image<T>,
    baseline: f64,
    k: &CameraIntrinsics,
    block: usize,
    max_disparity: usize,
) -> Result<Image<f64>> {
    if left.dims() != right.dims() {
        return Err(Error::Dimension {
            expected: left.dims(),
            found: right.dims(),
        });
    }
    if block % 2 == 0 {
        return Err(Error::InvalidArgument(format!("stereo block {block} must be odd")));
    }
    if !(baseline > 0.0) {
        return Err(Error::InvalidArgument(format!("baseline {baseline} must be positive")));
    }
    let (w, h) = left.dims();
    let dl = wta(left, right, block, max_disparity, true);
    let dr = wta(right, left, block, max_disparity, false);
    let depth = (0..w * h)
        .map(|i| {
            let Some(d) = dl[i] else { return 0.0 };
            if d == 0 {
                return 0.0;
            }
            let (x, y) = (i % w, i / w);
            match dr[y * w + x - d] {
                Some(d2) if d2.abs_diff(d) <= 1 => k.fx * baseline / d as f64,
                _ => 0.0,
            }
        })
        .collect();
    Image::new(w, h, depth)
}
