//! Stage orchestration: oracle pairs → coarse homography → iterative
//! refinement → correction, each evaluated on one held-out pair set.

use std::collections::BTreeSet;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::correction::{fit_correction_frames, CorrectionConfig};
use crate::error::{CalibError, Result};
use crate::geometry::{reprojection_metrics, Correspondence, Homography, ResidualReport, Source};
use crate::iterative::{self, CalibrationState, CheckpointRecord, Frame, RefineConfig};
use crate::robust::{ransac_homography, RansacConfig, RansacResult};
use crate::sampling::{block_sample_indices, BlockGrid};
use crate::sim::{generate, mix_seed, GroundTruth, SceneConfig, SimOracle};

/// Number of one-pixel histogram buckets covering `[0, 200)`.
pub const HISTOGRAM_BUCKETS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Coarse,
    Iterative,
    Correction,
    Evaluation,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Coarse => "coarse",
            Stage::Iterative => "iterative",
            Stage::Correction => "correction",
            Stage::Evaluation => "evaluation",
        })
    }
}

/// Source of cross-sensor correspondences for a frame.
pub trait CorrespondenceProvider {
    fn correspondences(&self, frame: &Frame) -> Vec<Correspondence>;
}

#[derive(Debug, Clone)]
pub struct CoarseResult {
    pub h: Homography,
    /// Indices into the input of the block-sampled pairs.
    pub sampled: Vec<usize>,
    /// Indices into the input of the RANSAC inliers.
    pub inliers: Vec<usize>,
    pub ransac: RansacResult,
}

/// Block-samples the oracle pairs, then fits them robustly.
pub fn coarse_calibrate(pairs: &[Correspondence], grid: &BlockGrid, cfg: &RansacConfig) -> Result<CoarseResult> {
    grid.validate().map_err(CalibError::InvalidConfig)?;
    let sampled = block_sample_indices(pairs, grid);
    if sampled.len() < 4 {
        return Err(CalibError::InsufficientPairs {
            needed: 4,
            got: sampled.len(),
        });
    }
    let subset: Vec<Correspondence> = sampled.iter().map(|&i| pairs[i]).collect();
    let ransac = ransac_homography(&subset, cfg)?;
    let inliers = ransac.inlier_indices.iter().map(|&i| sampled[i]).collect();
    Ok(CoarseResult {
        h: ransac.h,
        sampled,
        inliers,
        ransac,
    })
}

/// Residual counts in one-pixel buckets; residuals at or beyond 200 px go
/// to `overflow`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub counts: Vec<usize>,
    pub overflow: usize,
}

impl Histogram {
    pub fn from_residuals(residuals: &[f64]) -> Self {
        let mut counts = vec![0; HISTOGRAM_BUCKETS];
        let mut overflow = 0;
        for &r in residuals {
            // Residuals are non-negative; NaN never occurs for finite pairs.
            let b = r.floor();
            if b < HISTOGRAM_BUCKETS as f64 {
                counts[b.max(0.0) as usize] += 1;
            } else {
                overflow += 1;
            }
        }
        Self { counts, overflow }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.overflow
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: ResidualReport,
    pub histogram: Histogram,
}

pub fn evaluate(h: &Homography, eval_pairs: &[Correspondence]) -> Result<Evaluation> {
    let report = reprojection_metrics(h, eval_pairs)?;
    let histogram = Histogram::from_residuals(&report.per_pair);
    Ok(Evaluation { report, histogram })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Grid for coarse-stage block sampling.
    pub coarse_grid: BlockGrid,
    pub ransac: RansacConfig,
    pub refine: RefineConfig,
    pub correction: CorrectionConfig,
    /// Oracle pairs for the coarse stage come from this many leading
    /// training frames; 0 uses every training frame.
    pub coarse_frames: usize,
    /// Fraction of frames held out for evaluation.
    pub eval_fraction: f64,
    pub holdout_seed: u64,
}

impl PipelineConfig {
    pub fn new(image_width: u32, image_height: u32) -> Self {
        let grid = BlockGrid::new(image_width, image_height);
        Self {
            coarse_grid: grid,
            ransac: RansacConfig::default(),
            refine: RefineConfig::new(grid),
            correction: CorrectionConfig::default(),
            coarse_frames: 100,
            eval_fraction: 0.1,
            holdout_seed: 0,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        self.coarse_grid.validate()?;
        self.ransac.validate()?;
        self.refine.validate()?;
        self.correction.validate()?;
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err("pipeline.eval_fraction must be in (0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub coarse: ResidualReport,
    pub iterative: ResidualReport,
    pub correction: ResidualReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageHistograms {
    pub coarse: Histogram,
    pub iterative: Histogram,
    pub correction: Histogram,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineCounts {
    pub train_frames: usize,
    pub oracle_pairs: usize,
    pub coarse_sampled: usize,
    pub coarse_inliers: usize,
    pub accumulated: usize,
    pub correction_pairs: usize,
    pub eval_pairs: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub h_coarse: Homography,
    pub h_iterative: Homography,
    pub h_star: Homography,
    pub stage_metrics: StageMetrics,
    pub checkpoints: Vec<CheckpointRecord>,
    pub histograms: StageHistograms,
    pub loss_trace: Vec<f64>,
    pub counts: PipelineCounts,
}

/// Frame ids held out for evaluation: `round(fraction * n)` of them, at
/// least one, chosen uniformly by `seed`.
pub fn holdout_frames(frame_ids: &[u64], fraction: f64, seed: u64) -> BTreeSet<u64> {
    let n = frame_ids.len();
    if n == 0 {
        return BTreeSet::new();
    }
    let k = ((fraction * n as f64).round() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, n, k)
        .into_iter()
        .map(|i| frame_ids[i])
        .collect()
}

/// Noise-free pairs for camera-visible objects in the given frames.
pub fn ground_truth_pairs(gt: &GroundTruth, frames: &BTreeSet<u64>) -> Vec<Correspondence> {
    gt.frames
        .iter()
        .filter(|f| frames.contains(&f.frame_id))
        .flat_map(|f| {
            f.objects
                .iter()
                .filter(|o| o.visible_to_camera)
                .map(|o| Correspondence::new(o.plane, o.pixel, f.frame_id, Source::Oracle))
        })
        .collect()
}

/// Runs all stages on `frames` and evaluates each stage's matrix on
/// `eval_pairs`, which must come from frames absent from `frames`.
pub fn run_full(
    frames: &[Frame],
    oracle: &dyn CorrespondenceProvider,
    eval_pairs: &[Correspondence],
    cfg: &PipelineConfig,
) -> Result<PipelineReport> {
    cfg.validate().map_err(CalibError::InvalidConfig)?;
    let train_ids: BTreeSet<u64> = frames.iter().map(|f| f.frame_id).collect();
    let overlap: BTreeSet<u64> = eval_pairs
        .iter()
        .map(|p| p.frame_id)
        .filter(|id| train_ids.contains(id))
        .collect();
    if !overlap.is_empty() {
        return Err(CalibError::HeldOutViolation(overlap.into_iter().collect()));
    }
    if eval_pairs.is_empty() {
        return Err(CalibError::at(Stage::Evaluation)(CalibError::EmptySet));
    }

    let coarse_span = if cfg.coarse_frames == 0 {
        frames.len()
    } else {
        cfg.coarse_frames.min(frames.len())
    };
    let oracle_pairs: Vec<Correspondence> = frames[..coarse_span]
        .iter()
        .flat_map(|f| oracle.correspondences(f))
        .collect();
    let coarse = coarse_calibrate(&oracle_pairs, &cfg.coarse_grid, &cfg.ransac).map_err(CalibError::at(Stage::Coarse))?;
    log::info!(
        "coarse: {} oracle pairs, {} sampled, {} inliers",
        oracle_pairs.len(),
        coarse.sampled.len(),
        coarse.inliers.len()
    );

    let seeds: Vec<Correspondence> = coarse.inliers.iter().map(|&i| oracle_pairs[i]).collect();
    let state = CalibrationState::seeded(coarse.h, &seeds, &cfg.refine);
    let state = iterative::run_from(state, frames, &cfg.refine);
    let h_iterative = state.h_best;
    log::info!(
        "iterative: {} checkpoints, {} accumulated pairs",
        state.checkpoints.len(),
        state.accumulated.len()
    );

    let correction = fit_correction_frames(&h_iterative, frames, &cfg.correction).map_err(CalibError::at(Stage::Correction))?;
    log::info!(
        "correction: {} pairs, {} rounds",
        correction.pairs_used,
        correction.loss_trace.len()
    );

    let eval = |h: &Homography| evaluate(h, eval_pairs).map_err(CalibError::at(Stage::Evaluation));
    let (e_coarse, e_iter, e_corr) = (eval(&coarse.h)?, eval(&h_iterative)?, eval(&correction.h_star)?);

    Ok(PipelineReport {
        h_coarse: coarse.h,
        h_iterative,
        h_star: correction.h_star,
        stage_metrics: StageMetrics {
            coarse: e_coarse.report,
            iterative: e_iter.report,
            correction: e_corr.report,
        },
        histograms: StageHistograms {
            coarse: e_coarse.histogram,
            iterative: e_iter.histogram,
            correction: e_corr.histogram,
        },
        checkpoints: state.checkpoints,
        loss_trace: correction.loss_trace,
        counts: PipelineCounts {
            train_frames: frames.len(),
            oracle_pairs: oracle_pairs.len(),
            coarse_sampled: coarse.sampled.len(),
            coarse_inliers: coarse.inliers.len(),
            accumulated: state.accumulated.len(),
            correction_pairs: correction.pairs_used,
            eval_pairs: eval_pairs.len(),
        },
    })
}

/// A simulated experiment split into training frames and held-out pairs.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub train: Vec<Frame>,
    pub oracle: SimOracle,
    pub eval_pairs: Vec<Correspondence>,
    pub held_out: BTreeSet<u64>,
    pub ground_truth: GroundTruth,
}

pub fn prepare_experiment(scene: &SceneConfig, cfg: &PipelineConfig) -> Result<Experiment> {
    let (sims, gt) = generate(scene)?;
    let ids: Vec<u64> = sims.iter().map(|s| s.frame.frame_id).collect();
    let held_out = holdout_frames(&ids, cfg.eval_fraction, mix_seed(scene.seed, cfg.holdout_seed));
    let train_sims: Vec<_> = sims
        .into_iter()
        .filter(|s| !held_out.contains(&s.frame.frame_id))
        .collect();
    let oracle = SimOracle::new(&train_sims, scene.oracle_error_rate, scene.seed);
    let eval_pairs = ground_truth_pairs(&gt, &held_out);
    Ok(Experiment {
        train: train_sims.into_iter().map(|s| s.frame).collect(),
        oracle,
        eval_pairs,
        held_out,
        ground_truth: gt,
    })
}

/// Generates a scene and runs the full pipeline on it.
pub fn run_simulated(scene: &SceneConfig, cfg: &PipelineConfig) -> Result<(PipelineReport, Experiment)> {
    let exp = prepare_experiment(scene, cfg)?;
    let report = run_full(&exp.train, &exp.oracle, &exp.eval_pairs, cfg)?;
    Ok((report, exp))
}
