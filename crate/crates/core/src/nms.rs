//! Greedy non-maximum suppression and score ranking.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterestPoint<T> {
    pub x: usize,
    pub y: usize,
    pub score: T,
}

/// Points in selection order: descending score, ties by row-major position.
#[derive(Clone, Debug, PartialEq)]
pub struct InterestPointSet<T> {
    points: Vec<InterestPoint<T>>,
    width: usize,
    radius: f64,
}

/// Strict "ranks ahead of" order used by NMS and [`InterestPointSet::rank_of`].
fn ahead<T: Scalar>(a: &InterestPoint<T>, b: &InterestPoint<T>, width: usize) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then((a.y * width + a.x).cmp(&(b.y * width + b.x)))
}

impl<T: Scalar> InterestPointSet<T> {
    /// Builds a set from arbitrary points, sorting them into rank order.
    pub fn from_points(mut points: Vec<InterestPoint<T>>, width: usize, radius: f64) -> Self {
        points.sort_by(|a, b| ahead(a, b, width));
        Self {
            points,
            width,
            radius,
        }
    }

    pub fn points(&self) -> &[InterestPoint<T>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn nms_radius(&self) -> f64 {
        self.radius
    }

    pub fn get(&self, j: usize) -> &InterestPoint<T> {
        &self.points[j]
    }

    /// The first `n` points, which is exactly what NMS returns when asked for `n`.
    pub fn prefix(&self, n: usize) -> Self {
        Self {
            points: self.points[..n.min(self.points.len())].to_vec(),
            width: self.width,
            radius: self.radius,
        }
    }

    /// 1-based rank: one plus the number of points ranked strictly ahead.
    pub fn rank_of(&self, j: usize) -> Result<usize> {
        let p = self.points.get(j).ok_or_else(|| {
            Error::InvalidArgument(format!("point index {j} out of range ({})", self.len()))
        })?;
        Ok(1 + self
            .points
            .iter()
            .filter(|q| ahead(q, p, self.width) == Ordering::Less)
            .count())
    }

    /// Ranks of all points, computed with one sort.
    pub fn ranks(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| ahead(&self.points[a], &self.points[b], self.width));
        let mut ranks = vec![0; self.len()];
        for (r, &i) in order.iter().enumerate() {
            ranks[i] = r + 1;
        }
        ranks
    }

    /// Index of the point holding rank `rank` (1-based).
    pub fn inverse_rank(&self, rank: usize) -> Option<usize> {
        if rank == 0 || rank > self.len() {
            return None;
        }
        self.ranks().iter().position(|&r| r == rank)
    }
}

/// Greedy NMS: repeatedly take the best unsuppressed pixel and suppress every
/// pixel within Euclidean distance `<= radius`, until `n` points are taken or
/// the map is exhausted.
pub fn nms_select<T: Scalar>(score: &Image<T>, n: usize, radius: f64) -> Result<InterestPointSet<T>> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if radius < 1.0 {
        return Err(Error::InvalidArgument(format!("NMS radius {radius} < 1")));
    }
    let (w, h) = score.dims();
    let data = score.data();
    let mut order: Vec<u32> = (0..(w * h) as u32).collect();
    order.sort_by(|&a, &b| {
        data[b as usize]
            .partial_cmp(&data[a as usize])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });

    let r = radius.floor() as isize;
    let r2 = radius * radius;
    let mut suppressed = vec![false; w * h];
    let mut points = Vec::with_capacity(n.min(w * h));
    for idx in order {
        let idx = idx as usize;
        if suppressed[idx] {
            continue;
        }
        let (x, y) = (idx % w, idx / w);
        points.push(InterestPoint {
            x,
            y,
            score: data[idx],
        });
        if points.len() == n {
            break;
        }
        for dy in -r..=r {
            let yy = y as isize + dy;
            if yy < 0 || yy >= h as isize {
                continue;
            }
            for dx in -r..=r {
                let xx = x as isize + dx;
                if xx < 0 || xx >= w as isize {
                    continue;
                }
                if (dx * dx + dy * dy) as f64 <= r2 {
                    suppressed[yy as usize * w + xx as usize] = true;
                }
            }
        }
    }
    Ok(InterestPointSet {
        points,
        width: w,
        radius,
    })
}
