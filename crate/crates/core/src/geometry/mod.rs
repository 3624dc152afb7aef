//! Planar projective geometry between the LiDAR ground plane and the image.
//!
//! A [`Homography`] maps a ground-plane point `(x, y)` (meters, Z dropped)
//! to a pixel `(u, v)`:
//!
//! ```text
//! [u w, v w, w]^T = H [x, y, 1]^T
//! ```
//!
//! Homographies are only defined up to scale, so every [`Homography`] is
//! stored in canonical form: unit Frobenius norm, `h33 > 0` when `h33 != 0`,
//! otherwise the first nonzero entry (row-major) positive.

mod dlt;
mod refine;

pub use dlt::{estimate_homography, normalizing_transform};
pub use refine::{refine_homography, Refinement};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};

/// Absolute tolerance on the homogeneous coordinate below which a point is
/// considered to map to infinity.
pub const W_EPSILON: f64 = 1e-12;

/// Minimum |det| of a canonically scaled homography.
pub const SINGULARITY_TOLERANCE: f64 = 1e-12;

/// A point on the LiDAR ground plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanePoint {
    pub x: f64,
    pub y: f64,
}

impl PlanePoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn homogeneous(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, 1.0)
    }
}

/// A point on the image plane, in pixels. May lie outside the image.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// Where a correspondence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Oracle,
    GreedyMatched,
    Manual,
}

/// One LiDAR-plane point paired with one pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub lidar: PlanePoint,
    pub pixel: PixelPoint,
    pub frame_id: u64,
    pub source: Source,
}

impl Correspondence {
    pub fn new(lidar: PlanePoint, pixel: PixelPoint, frame_id: u64, source: Source) -> Self {
        Self {
            lidar,
            pixel,
            frame_id,
            source,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.lidar.is_finite() && self.pixel.is_finite()
    }
}

/// Non-singular 3x3 projective map from the ground plane to the image,
/// always held in canonical scale. Serializes as its three rows;
/// deserialization re-canonicalizes and rejects singular input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[[f64; 3]; 3]", try_from = "[[f64; 3]; 3]")]
pub struct Homography(Matrix3<f64>);

impl From<Homography> for [[f64; 3]; 3] {
    fn from(h: Homography) -> Self {
        h.rows()
    }
}

impl TryFrom<[[f64; 3]; 3]> for Homography {
    type Error = CalibError;

    fn try_from(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl Homography {
    /// Canonicalizes `m` and checks it is finite and non-singular.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let c = canonicalize(&m).ok_or(CalibError::NonFinite)?;
        let det = c.determinant();
        if !det.is_finite() || det.abs() <= SINGULARITY_TOLERANCE {
            return Err(CalibError::SingularMatrix { det });
        }
        Ok(Self(c))
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::new(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity()).expect("identity is non-singular")
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn project_homogeneous(&self, p: &PlanePoint) -> Vector3<f64> {
        self.0 * p.homogeneous()
    }

    /// Maps a ground-plane point to the image.
    pub fn project(&self, p: &PlanePoint) -> Result<PixelPoint> {
        project_matrix(&self.0, p)
    }

    /// `self * inner`, canonicalized. Projecting through the result equals
    /// projecting through `inner` then `self`.
    pub fn compose(&self, inner: &Homography) -> Result<Homography> {
        Homography::new(self.0 * inner.0)
    }

    pub fn inverse(&self) -> Result<Homography> {
        let inv = self
            .0
            .try_inverse()
            .ok_or(CalibError::SingularMatrix { det: 0.0 })?;
        Homography::new(inv)
    }

    /// Largest entrywise difference between two canonical matrices.
    pub fn max_abs_diff(&self, other: &Homography) -> f64 {
        (self.0 - other.0).amax()
    }

    /// Pixel-space inverse mapping; `None` for points mapping to infinity.
    pub fn unproject(&self, px: &PixelPoint) -> Option<PlanePoint> {
        let inv = self.0.try_inverse()?;
        let q = inv * Vector3::new(px.u, px.v, 1.0);
        if q.z.abs() <= W_EPSILON {
            return None;
        }
        Some(PlanePoint::new(q.x / q.z, q.y / q.z))
    }
}

impl Default for Homography {
    fn default() -> Self {
        Self::identity()
    }
}

/// Canonical scale: unit Frobenius norm with the sign convention above.
/// Returns `None` for zero or non-finite matrices. Idempotent bit-for-bit.
pub fn canonicalize(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let norm = m.norm();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    let mut c = if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
        *m
    } else {
        m / norm
    };
    // Row-major scan for the sign pivot; h33 takes priority when nonzero.
    let pivot = if c[(2, 2)] != 0.0 {
        c[(2, 2)]
    } else {
        (0..9)
            .map(|k| c[(k / 3, k % 3)])
            .find(|v| *v != 0.0)
            .unwrap_or(0.0)
    };
    if pivot < 0.0 {
        c = -c;
    }
    Some(c)
}

/// Projection through a raw (not necessarily canonical) matrix.
pub fn project_matrix(m: &Matrix3<f64>, p: &PlanePoint) -> Result<PixelPoint> {
    let q = m * p.homogeneous();
    if q.z.abs() <= W_EPSILON || !q.z.is_finite() {
        return Err(CalibError::DegenerateProjection { w: q.z });
    }
    Ok(PixelPoint::new(q.x / q.z, q.y / q.z))
}

/// Per-pair Euclidean residuals with their average and root-mean-square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub per_pair: Vec<f64>,
    pub aed: f64,
    pub rmse: f64,
    pub n: usize,
}

impl ResidualReport {
    pub fn from_residuals(per_pair: Vec<f64>) -> Result<Self> {
        if per_pair.is_empty() {
            return Err(CalibError::EmptySet);
        }
        let n = per_pair.len();
        let aed = per_pair.iter().sum::<f64>() / n as f64;
        let rmse = (per_pair.iter().map(|r| r * r).sum::<f64>() / n as f64).sqrt();
        // Rounding can put rmse a few ulps under aed when residuals are equal.
        let rmse = rmse.max(aed);
        Ok(Self {
            per_pair,
            aed,
            rmse,
            n,
        })
    }
}

/// Euclidean residual of one pair under `h`.
pub fn residual(h: &Homography, pair: &Correspondence) -> Result<f64> {
    Ok(h.project(&pair.lidar)?.distance(&pair.pixel))
}

/// Average Euclidean distance and RMSE of `pairs` under `h`.
pub fn reprojection_metrics(h: &Homography, pairs: &[Correspondence]) -> Result<ResidualReport> {
    if pairs.is_empty() {
        return Err(CalibError::EmptySet);
    }
    let per_pair = pairs
        .iter()
        .map(|p| residual(h, p))
        .collect::<Result<Vec<_>>>()?;
    ResidualReport::from_residuals(per_pair)
}

/// Condition number (ratio of extreme singular values) of a 3x3 matrix.
pub fn condition_number(m: &Matrix3<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn pair(x: f64, y: f64, u: f64, v: f64) -> Correspondence {
        Correspondence::new(PlanePoint::new(x, y), PixelPoint::new(u, v), 0, Source::Manual)
    }

    #[test]
    fn project_identity_and_scaling() {
        let p = PlanePoint::new(3.0, 4.0);
        assert_eq!(Homography::identity().project(&p).unwrap(), PixelPoint::new(3.0, 4.0));
        let s = Homography::from_rows([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let q = s.project(&p).unwrap();
        assert!(close(q.u, 6.0, 1e-12) && close(q.v, 8.0, 1e-12));
    }

    #[test]
    fn project_with_perspective_row() {
        let h = Homography::from_rows([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.1, 0.0, 1.0]]).unwrap();
        let q = h.project(&PlanePoint::new(1.0, 0.0)).unwrap();
        assert!(close(q.u, 1.0 / 1.1, 1e-12));
        assert!(close(q.v, 0.0, 1e-15));
    }

    #[test]
    fn project_to_infinity_is_degenerate() {
        let h = Homography::from_rows([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 1.0]]).unwrap();
        let err = h.project(&PlanePoint::new(-1.0, 5.0)).unwrap_err();
        assert!(matches!(err, CalibError::DegenerateProjection { .. }));
    }

    #[test]
    fn singular_matrix_rejected() {
        let err = Homography::from_rows([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 1.0]]).unwrap_err();
        assert!(matches!(err, CalibError::SingularMatrix { .. }));
        assert!(matches!(
            Homography::new(Matrix3::zeros()).unwrap_err(),
            CalibError::NonFinite
        ));
    }

    #[test]
    fn canonical_sign_convention() {
        let h = Homography::from_rows([[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]]).unwrap();
        assert!(h.matrix()[(2, 2)] > 0.0);
        assert!(close(h.matrix().norm(), 1.0, 1e-15));
        // h33 == 0: first nonzero entry (row-major) positive.
        let g = Homography::from_rows([[0.0, -2.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]).unwrap();
        assert!(g.matrix()[(0, 1)] > 0.0);
    }

    #[test]
    fn compose_examples() {
        let h = Homography::from_rows([[2.0, 0.1, 5.0], [0.2, 1.5, -3.0], [1e-3, 2e-3, 1.0]]).unwrap();
        assert!(h.compose(&Homography::identity()).unwrap().max_abs_diff(&h) < 1e-15);

        let a = Homography::from_rows([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let b = Homography::from_rows([[0.5, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        assert!(a.compose(&b).unwrap().max_abs_diff(&Homography::identity()) < 1e-15);

        let tx = Homography::from_rows([[1.0, 0.0, 3.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let ty = Homography::from_rows([[1.0, 0.0, 0.0], [0.0, 1.0, 4.0], [0.0, 0.0, 1.0]]).unwrap();
        let q = tx.compose(&ty).unwrap().project(&PlanePoint::new(0.0, 0.0)).unwrap();
        assert!(close(q.u, 3.0, 1e-12) && close(q.v, 4.0, 1e-12));
    }

    #[test]
    fn metrics_examples() {
        let h = Homography::identity();
        let r = reprojection_metrics(&h, &[pair(1.0, 2.0, 4.0, 6.0)]).unwrap();
        assert!(close(r.aed, 5.0, 1e-12) && close(r.rmse, 5.0, 1e-12));

        let r = reprojection_metrics(&h, &[pair(0.0, 0.0, 0.0, 0.0), pair(0.0, 0.0, 10.0, 0.0)]).unwrap();
        assert!(close(r.aed, 5.0, 1e-12));
        assert!(close(r.rmse, 50f64.sqrt(), 1e-12));
        assert_eq!(r.n, 2);

        assert!(matches!(
            reprojection_metrics(&h, &[]).unwrap_err(),
            CalibError::EmptySet
        ));
    }
}
