//! TOML run configuration shared by every CLI command.
//!
//! ```toml
//! [scene]
//! n_frames = 600
//! seed = 7
//!
//! [grid]
//! blocks_x = 5
//! blocks_y = 5
//! parity = "even"
//!
//! [refine]
//! recalib_interval = 100
//! gate = 40.0
//! ```
//!
//! Every section is optional and unknown keys are rejected. Image
//! dimensions come from `[scene]`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::association::MatchGate;
use crate::correction::CorrectionConfig;
use crate::error::{CalibError, Result};
use crate::iterative::{GuardMetric, RefineConfig};
use crate::pipeline::PipelineConfig;
use crate::robust::RansacConfig;
use crate::sampling::{BlockGrid, Parity};
use crate::sim::SceneConfig;
use crate::solver::SolverSettings;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub blocks_x: u32,
    pub blocks_y: u32,
    pub parity: Parity,
    /// Checkerboard skipping during coarse sampling.
    pub coarse_checkerboard: bool,
    /// Checkerboard skipping during iterative accumulation.
    pub refine_checkerboard: bool,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            blocks_x: 5,
            blocks_y: 5,
            parity: Parity::Even,
            coarse_checkerboard: true,
            refine_checkerboard: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineSection {
    pub recalib_interval: usize,
    /// Matching gate in pixels.
    pub gate: f64,
    pub metric: GuardMetric,
    pub occupancy_cap: usize,
    pub final_flush: bool,
}

impl Default for RefineSection {
    fn default() -> Self {
        let r = RefineConfig::new(BlockGrid::new(1, 1));
        Self {
            recalib_interval: r.recalib_interval,
            gate: r.gate.max_distance,
            metric: r.metric,
            occupancy_cap: r.occupancy_cap,
            final_flush: r.final_flush,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrectionSection {
    pub gate: f64,
    pub max_outer_rounds: usize,
    pub min_pairs: usize,
    pub lenient: bool,
    pub solver: SolverSettings,
}

impl Default for CorrectionSection {
    fn default() -> Self {
        let c = CorrectionConfig::default();
        Self {
            gate: c.gate.max_distance,
            max_outer_rounds: c.max_outer_rounds,
            min_pairs: c.min_pairs,
            lenient: c.lenient,
            solver: c.solver,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    pub coarse_frames: usize,
    pub eval_fraction: f64,
    pub holdout_seed: u64,
}

impl Default for PipelineSection {
    fn default() -> Self {
        let p = PipelineConfig::new(1, 1);
        Self {
            coarse_frames: p.coarse_frames,
            eval_fraction: p.eval_fraction,
            holdout_seed: p.holdout_seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Scene seeds for `run`; empty means just `scene.seed`.
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub frames: Option<PathBuf>,
    pub oracle: Option<PathBuf>,
    pub matrix: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub ransac: RansacConfig,
    pub grid: GridSection,
    pub refine: RefineSection,
    pub correction: CorrectionSection,
    pub pipeline: PipelineSection,
    pub sweep: SweepSection,
    pub paths: PathsSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CalibError::InvalidConfig(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every section; the message names the offending field.
    pub fn validate(&self) -> Result<()> {
        self.scene.validate().map_err(CalibError::InvalidConfig)?;
        self.pipeline_config().validate().map_err(CalibError::InvalidConfig)
    }

    fn grid(&self, checkerboard: bool) -> BlockGrid {
        BlockGrid {
            image_width: self.scene.image_width,
            image_height: self.scene.image_height,
            blocks_x: self.grid.blocks_x,
            blocks_y: self.grid.blocks_y,
            parity: self.grid.parity,
            checkerboard,
        }
    }

    pub fn coarse_grid(&self) -> BlockGrid {
        self.grid(self.grid.coarse_checkerboard)
    }

    pub fn refine_config(&self) -> RefineConfig {
        RefineConfig {
            recalib_interval: self.refine.recalib_interval,
            gate: MatchGate::new(self.refine.gate),
            grid: self.grid(self.grid.refine_checkerboard),
            metric: self.refine.metric,
            ransac: self.ransac,
            occupancy_cap: self.refine.occupancy_cap,
            final_flush: self.refine.final_flush,
        }
    }

    pub fn correction_config(&self) -> CorrectionConfig {
        CorrectionConfig {
            gate: MatchGate::new(self.correction.gate),
            max_outer_rounds: self.correction.max_outer_rounds,
            solver: self.correction.solver,
            min_pairs: self.correction.min_pairs,
            lenient: self.correction.lenient,
        }
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            coarse_grid: self.coarse_grid(),
            ransac: self.ransac,
            refine: self.refine_config(),
            correction: self.correction_config(),
            coarse_frames: self.pipeline.coarse_frames,
            eval_fraction: self.pipeline.eval_fraction,
            holdout_seed: self.pipeline.holdout_seed,
        }
    }

    pub fn sweep_seeds(&self) -> Vec<u64> {
        if self.sweep.seeds.is_empty() {
            vec![self.scene.seed]
        } else {
            self.sweep.seeds.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
        let p = c.pipeline_config();
        assert_eq!(p.coarse_grid.image_width, 1920);
        assert_eq!(p.refine.recalib_interval, 100);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::parse("[scene]\nn_frame = 3\n").unwrap_err();
        assert!(err.to_string().contains("n_frame"), "{err}");
        assert!(RunConfig::parse("[bogus]\n").is_err());
    }

    #[test]
    fn zero_frames_names_field() {
        let c = RunConfig::parse("[scene]\nn_frames = 0\n").unwrap();
        let err = c.validate().unwrap_err();
        assert!(err.to_string().contains("scene.n_frames"), "{err}");
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::default();
        c.grid.parity = Parity::Odd;
        c.sweep.seeds = vec![1, 2, 3];
        c.paths.out = Some("out".into());
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }
}
