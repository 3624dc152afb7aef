//! Ground-truth-aware correspondence provider with a configurable
//! mismatch rate.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{mix_seed, Label, SimFrame};
use crate::geometry::{Correspondence, Source};
use crate::iterative::Frame;
use crate::pipeline::CorrespondenceProvider;

const STREAM_ORACLE: u64 = 0x4f52_4143;

/// An oracle pair with its hidden provenance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OraclePair {
    pub pair: Correspondence,
    pub object_id: u32,
    /// The camera endpoint was replaced by a different detection.
    pub corrupted: bool,
}

/// True-identity pairs for every object detected by both sensors; each pair
/// is corrupted with probability `error_rate` by replacing its camera point
/// with another camera detection of the same frame. Pairs in frames with a
/// single camera detection cannot be corrupted.
pub fn oracle_pairs(frame: &SimFrame, error_rate: f64, seed: u64) -> Vec<OraclePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, mix_seed(STREAM_ORACLE, frame.frame.frame_id)));
    let camera_by_id: BTreeMap<u32, usize> = frame
        .camera_labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| match l {
            Label::Object(id) => Some((*id, i)),
            Label::Clutter => None,
        })
        .collect();
    let n_camera = frame.frame.camera_centers.len();

    let mut out = Vec::new();
    for (li, label) in frame.lidar_labels.iter().enumerate() {
        let Label::Object(id) = label else {
            continue;
        };
        let Some(&ci) = camera_by_id.get(id) else {
            continue;
        };
        let corrupt = rng.random::<f64>() < error_rate;
        let pick = rng.random_range(0..n_camera.max(2) - 1);
        let (cam, corrupted) = if corrupt && n_camera >= 2 {
            // Uniform over the other camera detections.
            let k = if pick >= ci { pick + 1 } else { pick };
            (k, true)
        } else {
            (ci, false)
        };
        out.push(OraclePair {
            pair: Correspondence::new(
                frame.frame.lidar_centers[li],
                frame.frame.camera_centers[cam],
                frame.frame.frame_id,
                Source::Oracle,
            ),
            object_id: *id,
            corrupted,
        });
    }
    out
}

/// Simulator-backed [`CorrespondenceProvider`].
#[derive(Debug, Clone)]
pub struct SimOracle {
    frames: BTreeMap<u64, SimFrame>,
    error_rate: f64,
    seed: u64,
}

impl SimOracle {
    pub fn new(frames: &[SimFrame], error_rate: f64, seed: u64) -> Self {
        Self {
            frames: frames.iter().map(|f| (f.frame.frame_id, f.clone())).collect(),
            error_rate,
            seed,
        }
    }
}

impl CorrespondenceProvider for SimOracle {
    fn correspondences(&self, frame: &Frame) -> Vec<Correspondence> {
        match self.frames.get(&frame.frame_id) {
            Some(sim) => oracle_pairs(sim, self.error_rate, self.seed)
                .into_iter()
                .map(|p| p.pair)
                .collect(),
            None => Vec::new(),
        }
    }
}
