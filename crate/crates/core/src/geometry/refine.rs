use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use super::{normalizing_transform, reprojection_metrics, Correspondence, Homography};
use crate::error::{CalibError, Result};
use crate::solver::{gauge_index, minimize, ProjectionProblem, SolverSettings};

/// Outcome of [`refine_homography`]. `converged == false` means the solver
/// hit its iteration cap; `h` is still the best iterate found.
#[derive(Debug, Clone, Serialize)]
pub struct Refinement {
    pub h: Homography,
    pub initial_sse: f64,
    pub final_sse: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn sse(h: &Homography, pairs: &[Correspondence]) -> Result<f64> {
    let r = reprojection_metrics(h, pairs)?;
    Ok(r.per_pair.iter().map(|e| e * e).sum())
}

/// Locally minimizes the summed squared reprojection error starting from
/// `h0`, with default solver settings.
pub fn refine_homography(pairs: &[Correspondence], h0: &Homography) -> Result<Refinement> {
    refine_homography_with(pairs, h0, &SolverSettings::default())
}

/// As [`refine_homography`] with explicit solver settings.
///
/// The optimization runs in Hartley-normalized coordinates, where pixel
/// residuals are a constant multiple of the original ones, so the minimizer
/// is unchanged. The largest-magnitude entry of the normalized start matrix
/// is frozen to fix the scale.
pub fn refine_homography_with(
    pairs: &[Correspondence],
    h0: &Homography,
    settings: &SolverSettings,
) -> Result<Refinement> {
    if pairs.len() < 4 {
        return Err(CalibError::InsufficientPairs {
            needed: 4,
            got: pairs.len(),
        });
    }
    let initial_sse = sse(h0, pairs)?;
    let unchanged = |iterations, converged| Refinement {
        h: *h0,
        initial_sse,
        final_sse: initial_sse,
        iterations,
        converged,
    };
    if initial_sse == 0.0 {
        return Ok(unchanged(0, true));
    }

    let (t_src, t_dst) = match (
        normalizing_transform(pairs.iter().map(|p| (p.lidar.x, p.lidar.y))),
        normalizing_transform(pairs.iter().map(|p| (p.pixel.u, p.pixel.v))),
    ) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(CalibError::DegenerateConfiguration("coincident points".into())),
    };
    let (Some(t_src_inv), Some(t_dst_inv)) = (t_src.try_inverse(), t_dst.try_inverse()) else {
        return Err(CalibError::DegenerateConfiguration("normalization".into()));
    };

    let points = pairs
        .iter()
        .map(|p| {
            let s = t_src * p.lidar.homogeneous();
            let d = t_dst * Vector3::new(p.pixel.u, p.pixel.v, 1.0);
            (s, [d.x, d.y])
        })
        .collect();
    let problem = ProjectionProblem {
        outer: Matrix3::identity(),
        points,
    };
    let g0 = t_dst * h0.matrix() * t_src_inv;
    let g0 = g0 / g0.norm();
    let Some(outcome) = minimize(&problem, g0, gauge_index(&g0), settings) else {
        return Ok(unchanged(0, false));
    };

    let candidate = match Homography::new(t_dst_inv * outcome.matrix * t_src) {
        Ok(h) => h,
        Err(_) => return Ok(unchanged(outcome.iterations, outcome.converged)),
    };
    // Compare in pixel units; rounding in the round trip must not let a
    // worse matrix through.
    match sse(&candidate, pairs) {
        Ok(final_sse) if final_sse <= initial_sse => Ok(Refinement {
            h: candidate,
            initial_sse,
            final_sse,
            iterations: outcome.iterations,
            converged: outcome.converged,
        }),
        _ => Ok(unchanged(outcome.iterations, outcome.converged)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{PixelPoint, PlanePoint, Source};

    fn truth() -> Homography {
        Homography::from_rows([[18.0, -3.0, 960.0], [2.0, 14.0, 540.0], [2e-4, -3e-4, 1.0]]).unwrap()
    }

    fn exact_pairs(h: &Homography, n: usize) -> Vec<Correspondence> {
        (0..n)
            .map(|i| {
                let x = -25.0 + 50.0 * ((i * 7) % n) as f64 / n as f64;
                let y = -25.0 + 50.0 * ((i * 13) % n) as f64 / n as f64 + (i % 3) as f64;
                let l = PlanePoint::new(x, y);
                Correspondence::new(l, h.project(&l).unwrap(), 0, Source::Manual)
            })
            .collect()
    }

    #[test]
    fn optimal_start_is_fixed_point() {
        let h = truth();
        let pairs = exact_pairs(&h, 30);
        let r = refine_homography(&pairs, &h).unwrap();
        assert!(r.h.max_abs_diff(&h) < 1e-12);
        assert!(r.final_sse < 1e-16);
    }

    #[test]
    fn half_pixel_translation_recovered() {
        let h = truth();
        let pairs = exact_pairs(&h, 50);
        let shift = Homography::from_rows([[1.0, 0.0, 0.5], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let h0 = shift.compose(&h).unwrap();
        let r = refine_homography(&pairs, &h0).unwrap();
        assert!(r.h.max_abs_diff(&h) < 1e-6, "{}", r.h.max_abs_diff(&h));
        assert!(r.converged);
    }

    #[test]
    fn insufficient_pairs() {
        let h = truth();
        let pairs = exact_pairs(&h, 3);
        assert!(matches!(
            refine_homography(&pairs, &h).unwrap_err(),
            CalibError::InsufficientPairs { .. }
        ));
    }

    #[test]
    fn never_worse_than_start() {
        let h = truth();
        let mut pairs = exact_pairs(&h, 40);
        for (i, p) in pairs.iter_mut().enumerate() {
            let d = ((i * 37 % 11) as f64 - 5.0) * 0.3;
            p.pixel = PixelPoint::new(p.pixel.u + d, p.pixel.v - 0.5 * d);
        }
        let r = refine_homography(&pairs, &h).unwrap();
        assert!(r.final_sse <= r.initial_sse);
        let before = reprojection_metrics(&h, &pairs).unwrap().rmse;
        let after = reprojection_metrics(&r.h, &pairs).unwrap().rmse;
        assert!(after <= before);
    }
}
