//! Greedy bipartite matching of projected LiDAR detections to camera
//! detections.
//!
//! The globally cheapest admissible pair is taken first, both endpoints are
//! removed, and the process repeats. Detections with no admissible partner
//! stay unmatched instead of being forced into a pairing.

use serde::{Deserialize, Serialize};

use crate::geometry::PixelPoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchGate {
    /// Largest admissible pixel distance.
    pub max_distance: f64,
}

impl Default for MatchGate {
    fn default() -> Self {
        Self { max_distance: 40.0 }
    }
}

impl MatchGate {
    pub fn new(max_distance: f64) -> Self {
        Self { max_distance }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_distance > 0.0 && self.max_distance.is_finite() {
            Ok(())
        } else {
            Err("gate max_distance must be positive".into())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub lidar: usize,
    pub camera: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchSet {
    /// In selection order (non-decreasing cost).
    pub matches: Vec<Match>,
    pub unmatched_lidar: Vec<usize>,
    pub unmatched_camera: Vec<usize>,
}

/// Greedy one-to-one matching under `gate`. Ties are broken by lower cost,
/// then lower LiDAR index, then lower camera index.
pub fn greedy_match(projected: &[PixelPoint], detections: &[PixelPoint], gate: &MatchGate) -> MatchSet {
    let mut candidates: Vec<Match> = Vec::new();
    for (li, p) in projected.iter().enumerate() {
        for (ci, d) in detections.iter().enumerate() {
            let cost = p.distance(d);
            if cost <= gate.max_distance {
                candidates.push(Match {
                    lidar: li,
                    camera: ci,
                    cost,
                });
            }
        }
    }
    // Sorting once and scanning is equivalent to repeatedly extracting the
    // minimum over the remaining free endpoints.
    candidates.sort_by(|a, b| {
        a.cost
            .total_cmp(&b.cost)
            .then(a.lidar.cmp(&b.lidar))
            .then(a.camera.cmp(&b.camera))
    });

    let mut lidar_used = vec![false; projected.len()];
    let mut camera_used = vec![false; detections.len()];
    let mut matches = Vec::new();
    for m in candidates {
        if !lidar_used[m.lidar] && !camera_used[m.camera] {
            lidar_used[m.lidar] = true;
            camera_used[m.camera] = true;
            matches.push(m);
        }
    }
    let unmatched = |used: &[bool]| {
        used.iter()
            .enumerate()
            .filter(|(_, u)| !**u)
            .map(|(i, _)| i)
            .collect::<Vec<_>>()
    };
    MatchSet {
        unmatched_lidar: unmatched(&lidar_used),
        unmatched_camera: unmatched(&camera_used),
        matches,
    }
}
