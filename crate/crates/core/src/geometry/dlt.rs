//! Normalized direct linear transform.

use nalgebra::{DMatrix, Matrix3};

use super::{Correspondence, Homography};
use crate::error::{CalibError, Result};

/// Relative singular-value threshold below which the design matrix is
/// treated as rank deficient.
const RANK_TOLERANCE: f64 = 1e-9;

/// Similarity transform moving the centroid of `pts` to the origin with
/// mean distance sqrt(2). `None` if all points coincide.
pub fn normalizing_transform(pts: impl Iterator<Item = (f64, f64)> + Clone) -> Option<Matrix3<f64>> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for (x, y) in pts.clone() {
        sx += x;
        sy += y;
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let (cx, cy) = (sx / n as f64, sy / n as f64);
    let mean = pts.map(|(x, y)| (x - cx).hypot(y - cy)).sum::<f64>() / n as f64;
    if mean <= 0.0 || !mean.is_finite() {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean;
    Some(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn apply(t: &Matrix3<f64>, x: f64, y: f64) -> (f64, f64) {
    (t[(0, 0)] * x + t[(0, 2)], t[(1, 1)] * y + t[(1, 2)])
}

fn collinear(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> bool {
    let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
    cross.abs() < 1e-9
}

/// Estimates the homography mapping each pair's LiDAR point to its pixel.
///
/// Both point sets are Hartley-normalized, the 2N x 9 design matrix is
/// solved for its smallest right singular vector, and the result is
/// denormalized and canonically scaled.
pub fn estimate_homography(pairs: &[Correspondence]) -> Result<Homography> {
    let n = pairs.len();
    if n < 4 {
        return Err(CalibError::InsufficientPairs { needed: 4, got: n });
    }
    if pairs.iter().any(|p| !p.is_finite()) {
        return Err(CalibError::DegenerateConfiguration("non-finite point".into()));
    }
    let src = pairs.iter().map(|p| (p.lidar.x, p.lidar.y));
    let dst = pairs.iter().map(|p| (p.pixel.u, p.pixel.v));
    let (t_src, t_dst) = match (normalizing_transform(src), normalizing_transform(dst)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(CalibError::DegenerateConfiguration(
                "coincident points".into(),
            ))
        }
    };

    let src_n: Vec<_> = pairs.iter().map(|p| apply(&t_src, p.lidar.x, p.lidar.y)).collect();
    let dst_n: Vec<_> = pairs.iter().map(|p| apply(&t_dst, p.pixel.u, p.pixel.v)).collect();

    if n == 4 {
        for (i, j, k) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
            if collinear(src_n[i], src_n[j], src_n[k]) || collinear(dst_n[i], dst_n[j], dst_n[k]) {
                return Err(CalibError::DegenerateConfiguration(
                    "three of four points collinear".into(),
                ));
            }
        }
    }

    // Pad to at least 9 rows so the SVD exposes the full right null space.
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (&(x, y), &(u, v))) in src_n.iter().zip(&dst_n).enumerate() {
        let r = 2 * i;
        a[(r, 0)] = x;
        a[(r, 1)] = y;
        a[(r, 2)] = 1.0;
        a[(r, 6)] = -u * x;
        a[(r, 7)] = -u * y;
        a[(r, 8)] = -u;
        a[(r + 1, 3)] = x;
        a[(r + 1, 4)] = y;
        a[(r + 1, 5)] = 1.0;
        a[(r + 1, 6)] = -v * x;
        a[(r + 1, 7)] = -v * y;
        a[(r + 1, 8)] = -v;
    }

    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| CalibError::DegenerateConfiguration("SVD failed".into()))?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
    let largest = sv[order[sv.len() - 1]];
    if largest.is_nan() || largest <= 0.0 || sv[order[1]] <= RANK_TOLERANCE * largest {
        return Err(CalibError::DegenerateConfiguration(
            "design matrix rank < 8".into(),
        ));
    }
    let h = v_t.row(order[0]);
    let h_n = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);

    let t_dst_inv = t_dst
        .try_inverse()
        .ok_or_else(|| CalibError::DegenerateConfiguration("normalization".into()))?;
    Homography::new(t_dst_inv * h_n * t_src).map_err(|e| match e {
        CalibError::SingularMatrix { .. } | CalibError::NonFinite => {
            CalibError::DegenerateConfiguration(format!("estimate is singular: {e}"))
        }
        other => other,
    })
}
