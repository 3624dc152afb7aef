//! Online refinement: project each frame's LiDAR centers through the best
//! matrix, greedily match them to camera centers, keep spatially spread
//! pairs, and every N frames recalibrate on everything accumulated. The
//! recalibrated matrix replaces the incumbent only if it lowers the
//! reprojection error on the accumulated set.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::association::{greedy_match, MatchGate};
use crate::error::{CalibError, Result};
use crate::geometry::{
    reprojection_metrics, Correspondence, Homography, PixelPoint, PlanePoint, Source,
};
use crate::robust::{ransac_homography, RansacConfig};
use crate::sampling::{block_sample, Block, BlockGrid};

/// Time-synchronized object centers from both sensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub frame_id: u64,
    pub lidar_centers: Vec<PlanePoint>,
    pub camera_centers: Vec<PixelPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuardMetric {
    Aed,
    Rmse,
}

impl GuardMetric {
    pub fn evaluate(&self, h: &Homography, pairs: &[Correspondence]) -> Result<f64> {
        let r = reprojection_metrics(h, pairs)?;
        Ok(match self {
            GuardMetric::Aed => r.aed,
            GuardMetric::Rmse => r.rmse,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    /// Frames between recalibrations (N).
    pub recalib_interval: usize,
    pub gate: MatchGate,
    pub grid: BlockGrid,
    pub metric: GuardMetric,
    pub ransac: RansacConfig,
    /// Maximum pairs stored per block.
    pub occupancy_cap: usize,
    /// Recalibrate after the last frame even if it is not a multiple of N.
    pub final_flush: bool,
}

impl RefineConfig {
    pub fn new(grid: BlockGrid) -> Self {
        Self {
            recalib_interval: 100,
            gate: MatchGate::default(),
            grid,
            metric: GuardMetric::Aed,
            ransac: RansacConfig::default(),
            occupancy_cap: 3,
            final_flush: true,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.recalib_interval == 0 {
            return Err("refine.recalib_interval must be >= 1".into());
        }
        if self.occupancy_cap == 0 {
            return Err("refine.occupancy_cap must be >= 1".into());
        }
        self.gate.validate()?;
        self.grid.validate()?;
        self.ransac.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    TooFewPairs,
    ConsensusFailure,
}

/// One recalibration attempt. `updated` is true iff `err_new < err_best`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub frame_id: u64,
    pub err_new: Option<f64>,
    pub err_best: Option<f64>,
    pub updated: bool,
    pub skipped: Option<SkipReason>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub degenerate_projections: usize,
    pub out_of_order_frames: usize,
    pub occupancy_rejections: usize,
}

#[derive(Debug, Clone)]
pub struct CalibrationState {
    pub h_best: Homography,
    pub accumulated: Vec<Correspondence>,
    pub frames_seen: usize,
    pub checkpoints: Vec<CheckpointRecord>,
    pub diagnostics: Diagnostics,
    last_frame_id: Option<u64>,
    occupancy: BTreeMap<Block, Vec<usize>>,
}

impl CalibrationState {
    pub fn new(h0: Homography) -> Self {
        Self {
            h_best: h0,
            accumulated: Vec::new(),
            frames_seen: 0,
            checkpoints: Vec::new(),
            diagnostics: Diagnostics::default(),
            last_frame_id: None,
            occupancy: BTreeMap::new(),
        }
    }

    /// Starts from `h0` with `seeds` (typically the coarse-stage inliers)
    /// inserted under the occupancy rule.
    pub fn seeded(h0: Homography, seeds: &[Correspondence], cfg: &RefineConfig) -> Self {
        let mut s = Self::new(h0);
        for p in seeds {
            s.try_accumulate(*p, cfg);
        }
        s
    }

    pub fn last_frame_id(&self) -> Option<u64> {
        self.last_frame_id
    }

    /// Adds `pair` if its block is empty, or if it lies at least half a
    /// block diagonal from every pair already in that block and the block
    /// holds fewer than `occupancy_cap` pairs.
    fn try_accumulate(&mut self, pair: Correspondence, cfg: &RefineConfig) -> bool {
        let Some(block) = cfg.grid.retained_block_of(&pair.pixel) else {
            return false;
        };
        let min_sep = 0.5 * cfg.grid.block_diagonal();
        let slot = self.occupancy.entry(block).or_default();
        let admissible = slot.len() < cfg.occupancy_cap
            && slot
                .iter()
                .all(|&i| self.accumulated[i].pixel.distance(&pair.pixel) >= min_sep);
        if admissible {
            slot.push(self.accumulated.len());
            self.accumulated.push(pair);
        } else {
            self.diagnostics.occupancy_rejections += 1;
        }
        admissible
    }

    /// Matches one frame against the current best matrix and accumulates
    /// the block-sampled survivors. Never changes `h_best`.
    pub fn ingest_frame(&mut self, frame: &Frame, cfg: &RefineConfig) -> Result<()> {
        if let Some(last) = self.last_frame_id {
            if frame.frame_id <= last {
                return Err(CalibError::OutOfOrderFrame {
                    last,
                    got: frame.frame_id,
                });
            }
        }

        let mut projected = Vec::with_capacity(frame.lidar_centers.len());
        let mut lidar = Vec::with_capacity(frame.lidar_centers.len());
        for p in &frame.lidar_centers {
            match self.h_best.project(p) {
                Ok(q) => {
                    projected.push(q);
                    lidar.push(*p);
                }
                Err(_) => self.diagnostics.degenerate_projections += 1,
            }
        }
        let matched = greedy_match(&projected, &frame.camera_centers, &cfg.gate);
        let candidates: Vec<Correspondence> = matched
            .matches
            .iter()
            .map(|m| {
                Correspondence::new(
                    lidar[m.lidar],
                    frame.camera_centers[m.camera],
                    frame.frame_id,
                    Source::GreedyMatched,
                )
            })
            .collect();
        for pair in block_sample(&candidates, &cfg.grid) {
            self.try_accumulate(pair, cfg);
        }

        self.frames_seen += 1;
        self.last_frame_id = Some(frame.frame_id);
        Ok(())
    }

    /// Recalibrates on the accumulated set and applies the error guard.
    pub fn checkpoint_recalibrate(&mut self, cfg: &RefineConfig) {
        let frame_id = self.last_frame_id.unwrap_or(0);
        let err_best = cfg.metric.evaluate(&self.h_best, &self.accumulated).ok();
        let skipped = |reason| CheckpointRecord {
            frame_id,
            err_new: None,
            err_best,
            updated: false,
            skipped: Some(reason),
        };
        if self.accumulated.len() < 4 {
            self.checkpoints.push(skipped(SkipReason::TooFewPairs));
            return;
        }
        let h_new = match ransac_homography(&self.accumulated, &cfg.ransac) {
            Ok(r) => r.h,
            Err(e) => {
                log::debug!("checkpoint at frame {frame_id} skipped: {e}");
                self.checkpoints.push(skipped(SkipReason::ConsensusFailure));
                return;
            }
        };
        let err_new = cfg.metric.evaluate(&h_new, &self.accumulated).ok();
        let updated = match (err_new, err_best) {
            (Some(n), Some(b)) => n < b,
            (Some(_), None) => true,
            _ => false,
        };
        if updated {
            self.h_best = h_new;
        }
        log::debug!(
            "checkpoint frame={frame_id} pairs={} err_new={err_new:?} err_best={err_best:?} updated={updated}",
            self.accumulated.len()
        );
        self.checkpoints.push(CheckpointRecord {
            frame_id,
            err_new,
            err_best,
            updated,
            skipped: None,
        });
    }
}

/// Runs the refinement loop from `h0` with an empty accumulated set.
pub fn run<'a>(frames: impl IntoIterator<Item = &'a Frame>, h0: Homography, cfg: &RefineConfig) -> CalibrationState {
    run_from(CalibrationState::new(h0), frames, cfg)
}

/// Continues the refinement loop from an existing state. Per-frame errors
/// are tallied in the diagnostics and never abort the stream.
pub fn run_from<'a>(
    mut state: CalibrationState,
    frames: impl IntoIterator<Item = &'a Frame>,
    cfg: &RefineConfig,
) -> CalibrationState {
    let mut pending = false;
    for frame in frames {
        match state.ingest_frame(frame, cfg) {
            Ok(()) => pending = true,
            Err(e) => {
                log::warn!("frame {} skipped: {e}", frame.frame_id);
                state.diagnostics.out_of_order_frames += 1;
                continue;
            }
        }
        if state.frames_seen.is_multiple_of(cfg.recalib_interval) {
            state.checkpoint_recalibrate(cfg);
            pending = false;
        }
    }
    if pending && cfg.final_flush {
        state.checkpoint_recalibrate(cfg);
    }
    state
}
