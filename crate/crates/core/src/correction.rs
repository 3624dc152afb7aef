//! Correction-matrix refinement.
//!
//! Given a calibrated `H`, finds `H_delta` such that `H* = H * H_delta`
//! minimizes the self-supervised reprojection loss
//!
//! ```text
//! L = (1/M) sum_j || pi(H * H_delta * [x_j, y_j, 1]) - u_pi(j) ||^2
//! ```
//!
//! where the pairing `pi` is not given: LiDAR points are projected through
//! the current `H*` and greedily matched to their nearest camera detection.
//! Pairing and least-squares fitting alternate until the loss stalls.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::association::{greedy_match, MatchGate};
use crate::error::{CalibError, Result};
use crate::geometry::{project_matrix, Correspondence, Homography, PixelPoint, PlanePoint, Source};
use crate::iterative::Frame;
use crate::solver::{flatten, gauge_index, minimize, ProjectionProblem, SolverSettings};

/// Loss at or below this (px^2) is treated as an exact fit.
const EXACT_LOSS: f64 = 1e-20;
/// Outer loop stops once a round improves the loss by less than this fraction.
const OUTER_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionConfig {
    /// Implicit-pairing radius.
    pub gate: MatchGate,
    /// Re-pairing rounds.
    pub max_outer_rounds: usize,
    pub solver: SolverSettings,
    pub min_pairs: usize,
    /// Return an identity correction instead of failing when too few
    /// implicit pairs exist.
    pub lenient: bool,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        Self {
            gate: MatchGate::default(),
            max_outer_rounds: 10,
            solver: SolverSettings::default(),
            min_pairs: 12,
            lenient: false,
        }
    }
}

impl CorrectionConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.max_outer_rounds == 0 {
            return Err("correction.max_outer_rounds must be >= 1".into());
        }
        self.gate.validate()?;
        self.solver.validate()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrectionResult {
    pub h_delta: Homography,
    pub h_star: Homography,
    /// Loss after each accepted round; the first entry is the starting loss.
    pub loss_trace: Vec<f64>,
    pub pairs_used: usize,
}

/// Projects `lidar` through `h` and greedily pairs the projections with
/// `camera` detections inside `gate`.
pub fn implicit_pairs(
    h: &Homography,
    lidar: &[PlanePoint],
    camera: &[PixelPoint],
    gate: &MatchGate,
    frame_id: u64,
) -> Vec<Correspondence> {
    implicit_pairs_matrix(h.matrix(), lidar, camera, gate, frame_id)
}

fn implicit_pairs_matrix(
    m: &Matrix3<f64>,
    lidar: &[PlanePoint],
    camera: &[PixelPoint],
    gate: &MatchGate,
    frame_id: u64,
) -> Vec<Correspondence> {
    let (kept, projected): (Vec<PlanePoint>, Vec<PixelPoint>) = lidar
        .iter()
        .filter_map(|p| project_matrix(m, p).ok().map(|q| (*p, q)))
        .unzip();
    greedy_match(&projected, camera, gate)
        .matches
        .iter()
        .map(|mt| Correspondence::new(kept[mt.lidar], camera[mt.camera], frame_id, Source::GreedyMatched))
        .collect()
}

fn pair_frames(m: &Matrix3<f64>, frames: &[Frame], gate: &MatchGate) -> Vec<Correspondence> {
    frames
        .iter()
        .flat_map(|f| implicit_pairs_matrix(m, &f.lidar_centers, &f.camera_centers, gate, f.frame_id))
        .collect()
}

/// Reprojection loss of `H * H_delta` on `pairs`; `None` if a point maps to
/// infinity or `pairs` is empty.
pub fn reprojection_loss(h: &Homography, h_delta: &Matrix3<f64>, pairs: &[Correspondence]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    problem(h, pairs)
        .cost(h_delta)
        .map(|c| c / pairs.len() as f64)
}

/// Gradient of [`reprojection_loss`] with respect to the nine row-major
/// entries of `h_delta`.
pub fn reprojection_loss_gradient(
    h: &Homography,
    h_delta: &Matrix3<f64>,
    pairs: &[Correspondence],
) -> Option<[f64; 9]> {
    if pairs.is_empty() {
        return None;
    }
    let (_, _, jtr) = problem(h, pairs).normal_equations(h_delta)?;
    let scale = 2.0 / pairs.len() as f64;
    let mut g = [0.0; 9];
    for (k, v) in g.iter_mut().enumerate() {
        *v = scale * jtr[k];
    }
    Some(g)
}

/// First damped Gauss-Newton step from `h_delta` on `pairs`, over the
/// entries not frozen by the scale gauge.
pub fn first_step(h: &Homography, h_delta: &Matrix3<f64>, pairs: &[Correspondence], settings: &SolverSettings) -> Option<[f64; 9]> {
    let (_, jtj, jtr) = problem(h, pairs).normal_equations(h_delta)?;
    let step = crate::solver::damped_step(&jtj, &jtr, gauge_index(h_delta), settings.initial_damping)?;
    let mut out = [0.0; 9];
    for (k, v) in out.iter_mut().enumerate() {
        *v = step[k];
    }
    Some(out)
}

fn problem(h: &Homography, pairs: &[Correspondence]) -> ProjectionProblem {
    ProjectionProblem {
        outer: *h.matrix(),
        points: pairs
            .iter()
            .map(|p| (Vector3::new(p.lidar.x, p.lidar.y, 1.0), [p.pixel.u, p.pixel.v]))
            .collect(),
    }
}

/// Fits the correction for a single set of detections.
pub fn fit_correction(
    h: &Homography,
    lidar: &[PlanePoint],
    camera: &[PixelPoint],
    cfg: &CorrectionConfig,
) -> Result<CorrectionResult> {
    let frame = Frame {
        frame_id: 0,
        lidar_centers: lidar.to_vec(),
        camera_centers: camera.to_vec(),
    };
    fit_correction_frames(h, std::slice::from_ref(&frame), cfg)
}

/// Fits the correction over several frames; pairing happens within each
/// frame, the loss is taken over all pairs together.
pub fn fit_correction_frames(h: &Homography, frames: &[Frame], cfg: &CorrectionConfig) -> Result<CorrectionResult> {
    cfg.validate().map_err(CalibError::InvalidConfig)?;
    let identity = Matrix3::identity();
    let mut delta = identity;
    let mut pairs = pair_frames(h.matrix(), frames, &cfg.gate);

    let finish = |delta: Matrix3<f64>, loss_trace: Vec<f64>, pairs_used: usize| -> Result<CorrectionResult> {
        let h_delta = Homography::new(delta)?;
        // H * I is exactly H; composing with the canonical (scaled) identity
        // would re-round it.
        let h_star = if delta == identity { *h } else { h.compose(&h_delta)? };
        Ok(CorrectionResult {
            h_delta,
            h_star,
            loss_trace,
            pairs_used,
        })
    };

    if pairs.len() < cfg.min_pairs.max(1) {
        if cfg.lenient {
            let trace = reprojection_loss(h, &identity, &pairs).into_iter().collect();
            return finish(identity, trace, pairs.len());
        }
        return Err(CalibError::InsufficientPairs {
            needed: cfg.min_pairs.max(1),
            got: pairs.len(),
        });
    }

    let mut loss = reprojection_loss(h, &delta, &pairs)
        .ok_or(CalibError::DegenerateProjection { w: 0.0 })?;
    let mut trace = vec![loss];
    let frozen = gauge_index(&delta);

    for round in 0..cfg.max_outer_rounds {
        if loss <= EXACT_LOSS {
            break;
        }
        let Some(outcome) = minimize(&problem(h, &pairs), delta, frozen, &cfg.solver) else {
            break;
        };
        if outcome.matrix == delta {
            break;
        }
        let candidate = outcome.matrix;
        let Some(solved_loss) = reprojection_loss(h, &candidate, &pairs).filter(|l| *l <= loss) else {
            break;
        };
        let h_star = h.matrix() * candidate;
        let new_pairs = pair_frames(&h_star, frames, &cfg.gate);
        let repaired_loss = (new_pairs.len() >= cfg.min_pairs.max(1))
            .then(|| reprojection_loss(h, &candidate, &new_pairs))
            .flatten()
            .filter(|l| *l <= loss);
        let rel_before = loss;
        delta = candidate;
        match repaired_loss {
            Some(l) => {
                pairs = new_pairs;
                loss = l;
                trace.push(loss);
            }
            None => {
                // Re-pairing would raise the loss (typically by admitting
                // extra gated pairs): keep the step on the current pairing
                // and stop.
                log::debug!("correction round {round}: keeping previous pairing");
                loss = solved_loss;
                trace.push(loss);
                break;
            }
        }
        if (rel_before - loss) / rel_before < OUTER_TOLERANCE {
            break;
        }
    }

    debug_assert!(flatten(&delta).iter().all(|v| v.is_finite()));
    finish(delta, trace, pairs.len())
}
