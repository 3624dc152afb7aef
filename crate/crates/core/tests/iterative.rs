mod common;

use calibrefine::geometry::{reprojection_metrics, Homography, PixelPoint, PlanePoint};
use calibrefine::iterative::{run, CalibrationState, Frame, RefineConfig, SkipReason};
use calibrefine::sampling::BlockGrid;
use calibrefine::sim::{generate, SceneConfig};
use nalgebra::Matrix3;

fn scene(seed: u64, n_frames: usize) -> SceneConfig {
    SceneConfig {
        seed,
        n_frames,
        ..Default::default()
    }
}

fn noiseless(seed: u64, n_frames: usize) -> SceneConfig {
    SceneConfig {
        pixel_noise_sigma: 0.0,
        lidar_noise_sigma: 0.0,
        clutter_per_frame: 0.0,
        ..scene(seed, n_frames)
    }
}

fn frames_and_truth(cfg: &SceneConfig) -> (Vec<Frame>, Homography) {
    let (sims, gt) = generate(cfg).unwrap();
    (sims.into_iter().map(|s| s.frame).collect(), gt.h_true)
}

fn shifted(h: &Homography, du: f64, dv: f64) -> Homography {
    let t = Matrix3::new(1.0, 0.0, du, 0.0, 1.0, dv, 0.0, 0.0, 1.0);
    Homography::new(t * h.matrix()).unwrap()
}

/// Replays the loop by hand and checks the guard at every checkpoint.
#[test]
fn guard_is_sound_on_simulated_streams() {
    for seed in 0..5 {
        let cfg = scene(seed, 400);
        let (frames, h_true) = frames_and_truth(&cfg);
        let rc = RefineConfig::new(BlockGrid::new(cfg.image_width, cfg.image_height));
        let mut state = CalibrationState::new(shifted(&h_true, 6.0, -4.0));
        let mut prev_len = 0;
        for f in &frames {
            let before = state.h_best;
            state.ingest_frame(f, &rc).unwrap();
            assert_eq!(state.h_best, before, "ingest changed h_best");
            assert!(state.accumulated.len() >= prev_len);
            assert!(state.accumulated.len() <= rc.grid.retained_blocks() * rc.occupancy_cap);
            prev_len = state.accumulated.len();

            if state.frames_seen.is_multiple_of(rc.recalib_interval) {
                let n_records = state.checkpoints.len();
                state.checkpoint_recalibrate(&rc);
                let rec = state.checkpoints[n_records];
                assert_eq!(rec.frame_id, f.frame_id);
                if rec.skipped.is_some() {
                    assert_eq!(state.h_best, before);
                    continue;
                }
                let err_before = reprojection_metrics(&before, &state.accumulated).unwrap().aed;
                assert_eq!(rec.err_best, Some(err_before));
                if rec.updated {
                    let err_after = reprojection_metrics(&state.h_best, &state.accumulated).unwrap().aed;
                    assert_eq!(rec.err_new, Some(err_after));
                    assert!(err_after < err_before);
                } else {
                    assert_eq!(state.h_best.matrix(), before.matrix());
                }
            }
        }
    }
}

#[test]
fn noise_free_stream_keeps_true_matrix() {
    let cfg = noiseless(3, 300);
    let (frames, h_true) = frames_and_truth(&cfg);
    let rc = RefineConfig::new(BlockGrid::new(cfg.image_width, cfg.image_height));
    let state = run(&frames, h_true, &rc);
    assert_eq!(state.h_best, h_true);
    assert!(state.checkpoints.iter().all(|c| !c.updated));
}

#[test]
fn exact_accumulation_pulls_toward_truth() {
    let cfg = noiseless(4, 300);
    let (frames, h_true) = frames_and_truth(&cfg);
    let rc = RefineConfig::new(BlockGrid::new(cfg.image_width, cfg.image_height));
    let state = run(&frames, shifted(&h_true, 5.0, 3.0), &rc);
    assert!(state.checkpoints[0].updated);
    assert!(state.h_best.max_abs_diff(&h_true) < 1e-8, "{:e}", state.h_best.max_abs_diff(&h_true));
}

#[test]
fn manual_drive_equals_run() {
    let cfg = scene(6, 250);
    let (frames, h_true) = frames_and_truth(&cfg);
    let rc = RefineConfig::new(BlockGrid::new(cfg.image_width, cfg.image_height));
    let h0 = shifted(&h_true, -3.0, 2.0);
    let auto = run(&frames, h0, &rc);
    let mut manual = CalibrationState::new(h0);
    for f in &frames {
        manual.ingest_frame(f, &rc).unwrap();
        if manual.frames_seen.is_multiple_of(rc.recalib_interval) {
            manual.checkpoint_recalibrate(&rc);
        }
    }
    // 250 frames: checkpoints at 100, 200, then the final flush.
    manual.checkpoint_recalibrate(&rc);
    assert_eq!(auto.h_best, manual.h_best);
    assert_eq!(auto.checkpoints, manual.checkpoints);
    assert_eq!(auto.checkpoints.len(), 3);
    assert_eq!(auto.checkpoints[2].frame_id, 249);
}

#[test]
fn out_of_order_frames_are_skipped() {
    let grid = BlockGrid::new(1920, 1080);
    let rc = RefineConfig {
        recalib_interval: 1,
        ..RefineConfig::new(grid)
    };
    let f = |id| Frame {
        frame_id: id,
        lidar_centers: vec![PlanePoint::new(0.0, 0.0)],
        camera_centers: vec![PixelPoint::new(0.0, 0.0)],
    };
    let frames = vec![f(5), f(3), f(6)];
    let state = run(&frames, Homography::identity(), &rc);
    assert_eq!(state.frames_seen, 2);
    assert_eq!(state.diagnostics.out_of_order_frames, 1);
    assert!(state
        .checkpoints
        .iter()
        .all(|c| c.skipped == Some(SkipReason::TooFewPairs)));
}
