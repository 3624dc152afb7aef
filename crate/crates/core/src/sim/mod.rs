//! Ground-truth scene generator.
//!
//! Objects move along seeded piecewise-linear ground-plane trajectories.
//! Each frame reports noisy LiDAR centers for objects inside the LiDAR disc
//! and noisy pixel centers for objects whose true projection falls inside
//! the image, with independent dropout and uniform clutter per sensor. The
//! two fields of view intentionally differ, so some objects are seen by one
//! sensor only.
//!
//! Every frame draws from its own RNG stream derived from `(seed, index)`,
//! so frames can be produced in any order with identical results.

mod oracle;

pub use oracle::{oracle_pairs, OraclePair, SimOracle};

use std::f64::consts::TAU;

use nalgebra::Matrix3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};
use crate::geometry::{condition_number, Homography, PixelPoint, PlanePoint};
use crate::iterative::Frame;

/// Side length of the central ground patch that must map inside the image.
pub const GROUND_PATCH_M: f64 = 60.0;
/// Upper bound on the scene-normalized condition number of `h_true`.
pub const MAX_CONDITION: f64 = 1e4;
const MAX_HOMOGRAPHY_TRIES: usize = 1000;

const STREAM_HOMOGRAPHY: u64 = 0x484f_4d4f;
const STREAM_TRAJECTORY: u64 = 0x5452_414a;
const STREAM_FRAME: u64 = 0x4652_414d;

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub image_width: u32,
    pub image_height: u32,
    /// Concurrent objects.
    pub n_objects: usize,
    pub n_frames: usize,
    pub pixel_noise_sigma: f64,
    /// Meters.
    pub lidar_noise_sigma: f64,
    pub camera_dropout: f64,
    pub lidar_dropout: f64,
    /// Mean clutter detections per frame, per sensor.
    pub clutter_per_frame: f64,
    pub oracle_error_rate: f64,
    pub seed: u64,
    /// Radius of the LiDAR field of view, meters.
    pub lidar_range_m: f64,
    /// Objects roam within `[-r, r]^2` meters.
    pub roam_half_extent_m: f64,
    /// Bound on |h31|, |h32| of the generated homography (before scaling).
    pub max_projective: f64,
    pub frame_interval_s: f64,
    pub min_speed_mps: f64,
    pub max_speed_mps: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            image_width: 1920,
            image_height: 1080,
            n_objects: 12,
            n_frames: 600,
            pixel_noise_sigma: 0.5,
            lidar_noise_sigma: 0.05,
            camera_dropout: 0.1,
            lidar_dropout: 0.1,
            clutter_per_frame: 2.0,
            oracle_error_rate: 0.02,
            seed: 0,
            lidar_range_m: 45.0,
            roam_half_extent_m: 55.0,
            max_projective: 1e-3,
            frame_interval_s: 0.1,
            min_speed_mps: 3.0,
            max_speed_mps: 15.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let prob = |v: f64, name: &str| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(format!("scene.{name} must be in [0, 1]"))
            }
        };
        let nonneg = |v: f64, name: &str| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(format!("scene.{name} must be finite and >= 0"))
            }
        };
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(format!("scene.{name} must be positive"))
            }
        };
        if self.image_width == 0 || self.image_height == 0 {
            return Err("scene.image_width and scene.image_height must be positive".into());
        }
        if self.n_frames == 0 {
            return Err("scene.n_frames must be >= 1".into());
        }
        nonneg(self.pixel_noise_sigma, "pixel_noise_sigma")?;
        nonneg(self.lidar_noise_sigma, "lidar_noise_sigma")?;
        prob(self.camera_dropout, "camera_dropout")?;
        prob(self.lidar_dropout, "lidar_dropout")?;
        prob(self.oracle_error_rate, "oracle_error_rate")?;
        nonneg(self.clutter_per_frame, "clutter_per_frame")?;
        positive(self.lidar_range_m, "lidar_range_m")?;
        positive(self.roam_half_extent_m, "roam_half_extent_m")?;
        positive(self.frame_interval_s, "frame_interval_s")?;
        positive(self.min_speed_mps, "min_speed_mps")?;
        if !(self.max_speed_mps >= self.min_speed_mps && self.max_speed_mps.is_finite()) {
            return Err("scene.max_speed_mps must be >= scene.min_speed_mps".into());
        }
        nonneg(self.max_projective, "max_projective")?;
        // Keep w = 1 + h31 x + h32 y well away from zero over the roam area.
        if self.max_projective * self.roam_half_extent_m * 2.0 >= 0.5 {
            return Err("scene.max_projective too large for scene.roam_half_extent_m".into());
        }
        Ok(())
    }

    fn image_contains(&self, p: &PixelPoint) -> bool {
        p.u >= 0.0 && p.u < f64::from(self.image_width) && p.v >= 0.0 && p.v < f64::from(self.image_height)
    }
}

/// Condition number of `h` after mapping the ground patch and the image to
/// unit-scale coordinates. Raw pixel/meter matrices are dominated by unit
/// choice, so this is the meaningful conditioning measure.
pub fn scene_condition_number(h: &Homography, cfg: &SceneConfig) -> f64 {
    let (w, ht) = (f64::from(cfg.image_width), f64::from(cfg.image_height));
    let s = 2.0 / w.max(ht);
    let img = Matrix3::new(s, 0.0, -s * w / 2.0, 0.0, s, -s * ht / 2.0, 0.0, 0.0, 1.0);
    let half = GROUND_PATCH_M / 2.0;
    let world_inv = Matrix3::new(half, 0.0, 0.0, 0.0, half, 0.0, 0.0, 0.0, 1.0);
    condition_number(&(img * h.matrix() * world_inv))
}

/// Corners of the central ground patch mapped through `h`.
pub fn patch_corners(h: &Homography) -> Option<[PixelPoint; 4]> {
    let half = GROUND_PATCH_M / 2.0;
    let c = [(-half, -half), (half, -half), (half, half), (-half, half)];
    let mut out = [PixelPoint::default(); 4];
    for (o, (x, y)) in out.iter_mut().zip(c) {
        *o = h.project(&PlanePoint::new(x, y)).ok()?;
    }
    Some(out)
}

/// Seeded plane-to-image homography: rotation, anisotropic scale, a small
/// projective row, and a translation placing the central ground patch
/// inside the image.
pub fn random_homography(seed: u64, cfg: &SceneConfig) -> Homography {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, STREAM_HOMOGRAPHY));
    let (w, ht) = (f64::from(cfg.image_width), f64::from(cfg.image_height));
    let base = 0.9 * w.min(ht) / GROUND_PATCH_M;
    let half = GROUND_PATCH_M / 2.0;
    let corners = [(-half, -half), (half, -half), (half, half), (-half, half)];
    let pmax = cfg.max_projective;

    for _ in 0..MAX_HOMOGRAPHY_TRIES {
        let theta = rng.random_range(0.0..TAU);
        let sx = base * rng.random_range(0.5..=2.0);
        let flip = if rng.random_bool(0.5) { -1.0 } else { 1.0 };
        let sy = flip * base * rng.random_range(0.5..=2.0);
        let (p1, p2) = if pmax > 0.0 {
            (rng.random_range(-pmax..=pmax), rng.random_range(-pmax..=pmax))
        } else {
            (0.0, 0.0)
        };
        let (c, s) = (theta.cos(), theta.sin());
        let a = [[c * sx, -s * sy], [s * sx, c * sy]];

        let (mut umin, mut umax, mut vmin, mut vmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for (x, y) in corners {
            let den = p1 * x + p2 * y + 1.0;
            let u = (a[0][0] * x + a[0][1] * y) / den;
            let v = (a[1][0] * x + a[1][1] * y) / den;
            umin = umin.min(u);
            umax = umax.max(u);
            vmin = vmin.min(v);
            vmax = vmax.max(v);
        }
        // One-pixel margin on every side.
        let (tu_lo, tu_hi) = (1.0 - umin, w - 1.0 - umax);
        let (tv_lo, tv_hi) = (1.0 - vmin, ht - 1.0 - vmax);
        if tu_lo >= tu_hi || tv_lo >= tv_hi {
            continue;
        }
        let tu = rng.random_range(tu_lo..tu_hi);
        let tv = rng.random_range(tv_lo..tv_hi);
        let m = Matrix3::new(
            a[0][0] + tu * p1,
            a[0][1] + tu * p2,
            tu,
            a[1][0] + tv * p1,
            a[1][1] + tv * p2,
            tv,
            p1,
            p2,
            1.0,
        );
        let Ok(h) = Homography::new(m) else {
            continue;
        };
        if scene_condition_number(&h, cfg) < MAX_CONDITION {
            return h;
        }
    }
    // Unreachable for validated configs: a small centered isotropic map
    // always fits.
    let s = 0.25 * base;
    Homography::new(Matrix3::new(s, 0.0, w / 2.0, 0.0, s, ht / 2.0, 0.0, 0.0, 1.0))
        .expect("scaled similarity is non-singular")
}

/// Which object a detection came from, hidden from calibrators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Object(u32),
    Clutter,
}

/// A frame together with the hidden identity of each detection.
#[derive(Debug, Clone, PartialEq)]
pub struct SimFrame {
    pub frame: Frame,
    pub lidar_labels: Vec<Label>,
    pub camera_labels: Vec<Label>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectTruth {
    pub object_id: u32,
    pub plane: PlanePoint,
    pub pixel: PixelPoint,
    pub visible_to_camera: bool,
    pub visible_to_lidar: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFrame {
    pub frame_id: u64,
    pub objects: Vec<ObjectTruth>,
    pub lidar_labels: Vec<Label>,
    pub camera_labels: Vec<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub h_true: Homography,
    pub frames: Vec<GroundTruthFrame>,
}

#[derive(Debug, Clone)]
struct Trajectory {
    /// `(time, position)` waypoints with strictly increasing times.
    waypoints: Vec<(f64, PlanePoint)>,
}

impl Trajectory {
    fn at(&self, t: f64) -> PlanePoint {
        let i = self.waypoints.partition_point(|(wt, _)| *wt <= t);
        if i == 0 {
            return self.waypoints[0].1;
        }
        if i >= self.waypoints.len() {
            return self.waypoints[self.waypoints.len() - 1].1;
        }
        let (t0, a) = self.waypoints[i - 1];
        let (t1, b) = self.waypoints[i];
        let f = (t - t0) / (t1 - t0);
        PlanePoint::new(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y))
    }
}

/// A generated scene; frames are computed on demand.
#[derive(Debug, Clone)]
pub struct Scene {
    cfg: SceneConfig,
    h_true: Homography,
    trajectories: Vec<Trajectory>,
}

impl Scene {
    pub fn new(cfg: &SceneConfig) -> Result<Self> {
        cfg.validate().map_err(CalibError::InvalidConfig)?;
        let h_true = random_homography(cfg.seed, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, STREAM_TRAJECTORY));
        let r = cfg.roam_half_extent_m;
        let duration = cfg.n_frames as f64 * cfg.frame_interval_s;
        let trajectories = (0..cfg.n_objects)
            .map(|_| {
                let mut t = 0.0;
                let mut p = PlanePoint::new(rng.random_range(-r..=r), rng.random_range(-r..=r));
                let mut waypoints = vec![(t, p)];
                while t <= duration {
                    let q = PlanePoint::new(rng.random_range(-r..=r), rng.random_range(-r..=r));
                    let speed = rng.random_range(cfg.min_speed_mps..=cfg.max_speed_mps);
                    let dist = (q.x - p.x).hypot(q.y - p.y);
                    let dt = (dist / speed).max(cfg.frame_interval_s);
                    t += dt;
                    waypoints.push((t, q));
                    p = q;
                }
                Trajectory { waypoints }
            })
            .collect();
        Ok(Self {
            cfg: *cfg,
            h_true,
            trajectories,
        })
    }

    pub fn h_true(&self) -> &Homography {
        &self.h_true
    }

    pub fn config(&self) -> &SceneConfig {
        &self.cfg
    }

    /// Frame `index` and its ground truth. Depends only on the scene
    /// config and `index`.
    pub fn frame(&self, index: usize) -> (SimFrame, GroundTruthFrame) {
        let cfg = &self.cfg;
        let frame_id = index as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, mix_seed(STREAM_FRAME, frame_id)));
        let t = index as f64 * cfg.frame_interval_s;
        let lidar_noise = Normal::new(0.0, cfg.lidar_noise_sigma).expect("validated sigma");
        let pixel_noise = Normal::new(0.0, cfg.pixel_noise_sigma).expect("validated sigma");

        let mut lidar: Vec<(PlanePoint, Label)> = Vec::new();
        let mut camera: Vec<(PixelPoint, Label)> = Vec::new();
        let mut objects = Vec::with_capacity(self.trajectories.len());

        for (id, traj) in self.trajectories.iter().enumerate() {
            let id = id as u32;
            let plane = traj.at(t);
            let pixel = self
                .h_true
                .project(&plane)
                .expect("validated projective bound keeps w positive");
            let visible_to_lidar = plane.x.hypot(plane.y) <= cfg.lidar_range_m;
            let visible_to_camera = cfg.image_contains(&pixel);

            // Draw every variate unconditionally so streams stay aligned.
            let lidar_kept = rng.random::<f64>() >= cfg.lidar_dropout;
            let (lx, ly) = (lidar_noise.sample(&mut rng), lidar_noise.sample(&mut rng));
            let camera_kept = rng.random::<f64>() >= cfg.camera_dropout;
            let (cu, cv) = (pixel_noise.sample(&mut rng), pixel_noise.sample(&mut rng));

            if visible_to_lidar && lidar_kept {
                lidar.push((PlanePoint::new(plane.x + lx, plane.y + ly), Label::Object(id)));
            }
            if visible_to_camera && camera_kept {
                camera.push((PixelPoint::new(pixel.u + cu, pixel.v + cv), Label::Object(id)));
            }
            objects.push(ObjectTruth {
                object_id: id,
                plane,
                pixel,
                visible_to_camera,
                visible_to_lidar,
            });
        }

        let (n_lidar_clutter, n_camera_clutter) = if cfg.clutter_per_frame > 0.0 {
            let pois = Poisson::new(cfg.clutter_per_frame).expect("validated clutter rate");
            (pois.sample(&mut rng) as usize, pois.sample(&mut rng) as usize)
        } else {
            (0, 0)
        };
        for _ in 0..n_lidar_clutter {
            let r = cfg.lidar_range_m * rng.random::<f64>().sqrt();
            let a = rng.random_range(0.0..TAU);
            lidar.push((PlanePoint::new(r * a.cos(), r * a.sin()), Label::Clutter));
        }
        let (w, h) = (f64::from(cfg.image_width), f64::from(cfg.image_height));
        for _ in 0..n_camera_clutter {
            let p = PixelPoint::new(rng.random_range(0.0..w), rng.random_range(0.0..h));
            camera.push((p, Label::Clutter));
        }

        // Detection order must not reveal identity.
        lidar.shuffle(&mut rng);
        camera.shuffle(&mut rng);

        let (lidar_centers, lidar_labels): (Vec<_>, Vec<_>) = lidar.into_iter().unzip();
        let (camera_centers, camera_labels): (Vec<_>, Vec<_>) = camera.into_iter().unzip();
        let gt = GroundTruthFrame {
            frame_id,
            objects,
            lidar_labels: lidar_labels.clone(),
            camera_labels: camera_labels.clone(),
        };
        let sim = SimFrame {
            frame: Frame {
                frame_id,
                lidar_centers,
                camera_centers,
            },
            lidar_labels,
            camera_labels,
        };
        (sim, gt)
    }
}

/// Generates all frames of a scene with their ground truth.
pub fn generate(cfg: &SceneConfig) -> Result<(Vec<SimFrame>, GroundTruth)> {
    let scene = Scene::new(cfg)?;
    let (frames, gt_frames) = (0..cfg.n_frames).map(|i| scene.frame(i)).unzip();
    Ok((
        frames,
        GroundTruth {
            h_true: scene.h_true,
            frames: gt_frames,
        },
    ))
}
