//! RANSAC homography estimation.
//!
//! Minimal samples are index sets drawn from a seeded ChaCha stream, so the
//! sequence of sets depends only on `(pairs.len(), seed)` and not on the
//! contents or order of the pairs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};
use crate::geometry::{
    estimate_homography, refine_homography, reprojection_metrics, residual, Correspondence,
    Homography, ResidualReport,
};

const SAMPLE_SIZE: usize = 4;
/// Total draws (degenerate ones included) are capped at this multiple of
/// `max_iterations`.
const DRAW_CAP_FACTOR: usize = 10;
/// Local refit passes on the winning consensus set.
const LOCAL_PASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RansacConfig {
    pub max_iterations: usize,
    /// Inlier residual bound in pixels.
    pub inlier_threshold: f64,
    pub min_inlier_ratio: f64,
    /// Early-exit confidence of having drawn one all-inlier sample.
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            inlier_threshold: 3.0,
            min_inlier_ratio: 0.5,
            confidence: 0.999,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.max_iterations == 0 {
            return Err("ransac.max_iterations must be >= 1".into());
        }
        if !(self.inlier_threshold > 0.0 && self.inlier_threshold.is_finite()) {
            return Err("ransac.inlier_threshold must be positive".into());
        }
        if !(self.min_inlier_ratio > 0.0 && self.min_inlier_ratio <= 1.0) {
            return Err("ransac.min_inlier_ratio must be in (0, 1]".into());
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err("ransac.confidence must be in (0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RansacResult {
    pub h: Homography,
    /// Strictly increasing indices into the input.
    pub inlier_indices: Vec<usize>,
    /// Non-degenerate hypotheses scored.
    pub iterations_run: usize,
    pub inlier_report: ResidualReport,
}

#[derive(Debug, Clone)]
struct Consensus {
    h: Homography,
    inliers: Vec<usize>,
    aed: f64,
}

impl Consensus {
    fn score(h: Homography, pairs: &[Correspondence], threshold: f64) -> Self {
        let mut inliers = Vec::new();
        let mut sum = 0.0;
        for (i, p) in pairs.iter().enumerate() {
            if let Ok(r) = residual(&h, p) {
                if r <= threshold {
                    inliers.push(i);
                    sum += r;
                }
            }
        }
        let aed = if inliers.is_empty() {
            f64::INFINITY
        } else {
            sum / inliers.len() as f64
        };
        Self { h, inliers, aed }
    }

    /// More inliers wins; equal counts fall back to lower inlier AED.
    fn beats(&self, other: &Consensus) -> bool {
        self.inliers.len() > other.inliers.len()
            || (self.inliers.len() == other.inliers.len() && self.aed < other.aed)
    }
}

/// Number of draws needed to see one all-inlier sample with probability
/// `confidence` given inlier ratio `w`.
fn required_iterations(w: f64, confidence: f64) -> f64 {
    let p_good = w.powi(SAMPLE_SIZE as i32);
    if p_good >= 1.0 {
        return 0.0;
    }
    if p_good <= 0.0 {
        return f64::INFINITY;
    }
    (1.0 - confidence).ln() / (1.0 - p_good).ln()
}

/// Robustly fits a homography to `pairs`.
pub fn ransac_homography(pairs: &[Correspondence], cfg: &RansacConfig) -> Result<RansacResult> {
    let n = pairs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    ransac_with_sampler(pairs, cfg, move || {
        let idx = rand::seq::index::sample(&mut rng, n, SAMPLE_SIZE);
        [idx.index(0), idx.index(1), idx.index(2), idx.index(3)]
    })
}

/// RANSAC driven by an explicit minimal-sample source.
#[doc(hidden)]
pub fn ransac_with_sampler(
    pairs: &[Correspondence],
    cfg: &RansacConfig,
    mut draw: impl FnMut() -> [usize; SAMPLE_SIZE],
) -> Result<RansacResult> {
    cfg.validate().map_err(CalibError::InvalidConfig)?;
    let n = pairs.len();
    if n < SAMPLE_SIZE {
        return Err(CalibError::InsufficientPairs {
            needed: SAMPLE_SIZE,
            got: n,
        });
    }

    let mut best: Option<Consensus> = None;
    let mut iterations = 0usize;
    let mut draws = 0usize;
    let mut budget = cfg.max_iterations as f64;
    let draw_cap = cfg.max_iterations * DRAW_CAP_FACTOR;

    while (iterations as f64) < budget && iterations < cfg.max_iterations && draws < draw_cap {
        draws += 1;
        let idx = draw();
        let sample: Vec<Correspondence> = idx.iter().map(|&i| pairs[i]).collect();
        let h = match estimate_homography(&sample) {
            Ok(h) => h,
            Err(CalibError::DegenerateConfiguration(_)) => continue,
            Err(e) => return Err(e),
        };
        iterations += 1;
        let c = Consensus::score(h, pairs, cfg.inlier_threshold);
        if best.as_ref().is_none_or(|b| c.beats(b)) {
            let w = c.inliers.len() as f64 / n as f64;
            budget = required_iterations(w, cfg.confidence).min(cfg.max_iterations as f64);
            best = Some(c);
        }
    }

    let Some(sample_best) = best else {
        return Err(CalibError::ConsensusFailure {
            inliers: 0,
            total: n,
            ratio: 0.0,
            required: cfg.min_inlier_ratio,
        });
    };

    // Refit on the consensus set; keep a refit only if it scores at least
    // as well as the model it came from.
    let mut current = sample_best;
    for _ in 0..LOCAL_PASSES {
        if current.inliers.len() < SAMPLE_SIZE {
            break;
        }
        let subset: Vec<Correspondence> = current.inliers.iter().map(|&i| pairs[i]).collect();
        let Ok(refined) = refine_homography(&subset, &current.h) else {
            break;
        };
        let c = Consensus::score(refined.h, pairs, cfg.inlier_threshold);
        let same_set = c.inliers == current.inliers;
        if c.beats(&current) || (same_set && c.aed <= current.aed) {
            current = c;
            if same_set {
                break;
            }
        } else {
            break;
        }
    }

    let count = current.inliers.len();
    let ratio = count as f64 / n as f64;
    if count < SAMPLE_SIZE || ratio < cfg.min_inlier_ratio {
        return Err(CalibError::ConsensusFailure {
            inliers: count,
            total: n,
            ratio,
            required: cfg.min_inlier_ratio,
        });
    }
    let subset: Vec<Correspondence> = current.inliers.iter().map(|&i| pairs[i]).collect();
    let inlier_report = reprojection_metrics(&current.h, &subset)?;
    Ok(RansacResult {
        h: current.h,
        inlier_indices: current.inliers,
        iterations_run: iterations,
        inlier_report,
    })
}
