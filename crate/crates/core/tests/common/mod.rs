//! Shared fixtures and independent reference implementations.
#![allow(dead_code)]

use std::collections::BTreeSet;

use calibrefine::association::{greedy_match, MatchGate};
use calibrefine::correction::{
    fit_correction, fit_correction_frames, implicit_pairs, reprojection_loss, reprojection_loss_gradient,
    CorrectionConfig,
};
use calibrefine::geometry::{Correspondence, Homography, PixelPoint, PlanePoint, Source};
use calibrefine::iterative::Frame;
use calibrefine::sampling::{block_sample, block_sample_indices, BlockGrid, Parity};
use calibrefine::sim::{generate, random_homography, SceneConfig};
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Projection written out longhand.
pub fn project_rows(h: &[[f64; 3]; 3], x: f64, y: f64) -> (f64, f64) {
    let w = h[2][0] * x + h[2][1] * y + h[2][2];
    (
        (h[0][0] * x + h[0][1] * y + h[0][2]) / w,
        (h[1][0] * x + h[1][1] * y + h[1][2]) / w,
    )
}

/// Per-pair residuals, AED and RMSE by direct summation.
pub fn brute_metrics(h: &[[f64; 3]; 3], pairs: &[Correspondence]) -> (Vec<f64>, f64, f64) {
    let mut res = Vec::with_capacity(pairs.len());
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for p in pairs {
        let (u, v) = project_rows(h, p.lidar.x, p.lidar.y);
        let du = p.pixel.u - u;
        let dv = p.pixel.v - v;
        let e = (du * du + dv * dv).sqrt();
        res.push(e);
        sum += e;
        sum_sq += du * du + dv * dv;
    }
    let n = pairs.len() as f64;
    (res, sum / n, (sum_sq / n).sqrt())
}

pub fn relative_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

pub fn pair(x: f64, y: f64, u: f64, v: f64) -> Correspondence {
    Correspondence::new(PlanePoint::new(x, y), PixelPoint::new(u, v), 0, Source::Manual)
}

/// Ground points uniform in the central 60 m patch.
pub fn patch_point(rng: &mut impl Rng) -> PlanePoint {
    PlanePoint::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0))
}

/// Exact pairs through `h` for `n` patch points.
pub fn exact_pairs(h: &Homography, n: usize, rng: &mut impl Rng) -> Vec<Correspondence> {
    (0..n)
        .map(|i| {
            let p = patch_point(rng);
            Correspondence::new(p, h.project(&p).unwrap(), i as u64, Source::Oracle)
        })
        .collect()
}

/// Smallest triangle area (twice the signed area, absolute) among any
/// three of the points.
pub fn min_triangle_area(pts: &[PlanePoint]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            for k in j + 1..pts.len() {
                let (a, b, c) = (pts[i], pts[j], pts[k]);
                let area = ((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)).abs();
                best = best.min(area);
            }
        }
    }
    best
}

/// 4+ patch points with no three nearly collinear.
pub fn general_position(n: usize, rng: &mut impl Rng) -> Vec<PlanePoint> {
    loop {
        let pts: Vec<_> = (0..n).map(|_| patch_point(rng)).collect();
        if n > 8 || min_triangle_area(&pts) > 50.0 {
            return pts;
        }
    }
}

/// Inlier pairs with Gaussian pixel noise plus uniform clutter pairs.
/// Returns the pairs and a flag per pair marking true inliers.
pub fn contaminated(
    h: &Homography,
    n_inliers: usize,
    n_clutter: usize,
    sigma: f64,
    rng: &mut impl Rng,
) -> (Vec<Correspondence>, Vec<bool>) {
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut items = Vec::new();
    for _ in 0..n_inliers {
        let p = patch_point(rng);
        let q = h.project(&p).unwrap();
        let q = PixelPoint::new(q.u + noise.sample(rng), q.v + noise.sample(rng));
        items.push((Correspondence::new(p, q, 0, Source::Oracle), true));
    }
    for _ in 0..n_clutter {
        let p = patch_point(rng);
        let q = PixelPoint::new(rng.random_range(0.0..1920.0), rng.random_range(0.0..1080.0));
        items.push((Correspondence::new(p, q, 0, Source::Oracle), false));
    }
    // Interleave so inliers are not a prefix.
    use rand::seq::SliceRandom;
    items.shuffle(rng);
    items.into_iter().unzip()
}

/// Greedy matching by repeated global-minimum extraction.
pub fn brute_greedy(projected: &[PixelPoint], detections: &[PixelPoint], gate: f64) -> Vec<(usize, usize)> {
    let mut lidar_free = vec![true; projected.len()];
    let mut cam_free = vec![true; detections.len()];
    let mut out = Vec::new();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for (i, p) in projected.iter().enumerate() {
            if !lidar_free[i] {
                continue;
            }
            for (j, d) in detections.iter().enumerate() {
                if !cam_free[j] {
                    continue;
                }
                let c = ((p.u - d.u).powi(2) + (p.v - d.v).powi(2)).sqrt();
                if c > gate {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bc, bi, bj)) => c < bc || (c == bc && (i, j) < (bi, bj)),
                };
                if better {
                    best = Some((c, i, j));
                }
            }
        }
        match best {
            Some((_, i, j)) => {
                lidar_free[i] = false;
                cam_free[j] = false;
                out.push((i, j));
            }
            None => return out,
        }
    }
}

/// Reference block sampler: for every retained block, scan all inputs.
pub fn brute_block_sample(pairs: &[Correspondence], grid: &BlockGrid) -> Vec<usize> {
    let (bw, bh) = (
        f64::from(grid.image_width) / f64::from(grid.blocks_x),
        f64::from(grid.image_height) / f64::from(grid.blocks_y),
    );
    let mut keep = Vec::new();
    for ix in 0..grid.blocks_x {
        for iy in 0..grid.blocks_y {
            if grid.checkerboard {
                let even = (ix + iy) % 2 == 0;
                if even != (grid.parity == Parity::Even) {
                    continue;
                }
            }
            let (cu, cv) = ((f64::from(ix) + 0.5) * bw, (f64::from(iy) + 0.5) * bh);
            let mut best: Option<(f64, usize)> = None;
            for (i, p) in pairs.iter().enumerate() {
                let (u, v) = (p.pixel.u, p.pixel.v);
                let inside = u >= 0.0 && v >= 0.0 && u < f64::from(grid.image_width) && v < f64::from(grid.image_height);
                if !inside {
                    continue;
                }
                let bx = ((u / bw).floor() as u32).min(grid.blocks_x - 1);
                let by = ((v / bh).floor() as u32).min(grid.blocks_y - 1);
                if (bx, by) != (ix, iy) {
                    continue;
                }
                let d = ((p.pixel.u - cu).powi(2) + (p.pixel.v - cv).powi(2)).sqrt();
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, i));
                }
            }
            keep.extend(best.map(|(_, i)| i));
        }
    }
    keep.sort_unstable();
    keep
}

pub fn random_grid(r: &mut impl Rng) -> BlockGrid {
    loop {
        let g = BlockGrid {
            image_width: r.random_range(50..2000),
            image_height: r.random_range(50..1200),
            blocks_x: r.random_range(1..9),
            blocks_y: r.random_range(1..9),
            parity: if r.random_bool(0.5) { Parity::Even } else { Parity::Odd },
            checkerboard: r.random_bool(0.8),
        };
        if g.validate().is_ok() {
            return g;
        }
    }
}

pub fn random_pixel_pairs(r: &mut impl Rng, grid: &BlockGrid, n: usize) -> Vec<Correspondence> {
    let (w, h) = (f64::from(grid.image_width), f64::from(grid.image_height));
    (0..n)
        .map(|i| {
            // Some points fall just outside the image.
            let u = r.random_range(-0.05 * w..1.05 * w);
            let v = r.random_range(-0.05 * h..1.05 * h);
            Correspondence::new(PlanePoint::new(i as f64, 0.0), PixelPoint::new(u, v), 0, Source::Oracle)
        })
        .collect()
}

/// Checks every sampling property for one instance.
pub fn check_sampling_instance(pairs: &[Correspondence], grid: &BlockGrid) {
    let idx = block_sample_indices(pairs, grid);
    let out = block_sample(pairs, grid);
    assert_eq!(out.len(), idx.len());

    let mut blocks = BTreeSet::new();
    for p in &out {
        let b = grid.block_of(&p.pixel).expect("survivor inside the image");
        assert!(grid.is_retained(b), "wrong-parity block {b:?}");
        assert!(blocks.insert(b), "two survivors in {b:?}");
    }
    assert_eq!(idx, brute_block_sample(pairs, grid));
    assert_eq!(block_sample(&out, grid), out);
}

pub fn scattered(r: &mut impl Rng, n: usize, extent: f64) -> Vec<PixelPoint> {
    (0..n)
        .map(|_| PixelPoint::new(r.random_range(0.0..extent), r.random_range(0.0..extent)))
        .collect()
}

/// Integer grid points make exact cost ties common.
pub fn lattice(r: &mut impl Rng, n: usize) -> Vec<PixelPoint> {
    (0..n)
        .map(|_| PixelPoint::new(f64::from(r.random_range(0..6u8)) * 10.0, f64::from(r.random_range(0..6u8)) * 10.0))
        .collect()
}

/// Compares one greedy matching against the reference and checks
/// injectivity, the gate and the unmatched partition.
pub fn check_greedy_instance(a: &[PixelPoint], b: &[PixelPoint], gate: f64) {
    let m = greedy_match(a, b, &MatchGate::new(gate));
    let got: Vec<_> = m.matches.iter().map(|x| (x.lidar, x.camera)).collect();
    assert_eq!(got, brute_greedy(a, b, gate));

    let ls: BTreeSet<_> = m.matches.iter().map(|x| x.lidar).collect();
    let cs: BTreeSet<_> = m.matches.iter().map(|x| x.camera).collect();
    assert_eq!(ls.len(), m.matches.len());
    assert_eq!(cs.len(), m.matches.len());
    for x in &m.matches {
        assert!(x.cost <= gate);
        assert_eq!(x.cost, a[x.lidar].distance(&b[x.camera]));
    }
    assert_eq!(ls.len() + m.unmatched_lidar.len(), a.len());
    assert_eq!(cs.len() + m.unmatched_camera.len(), b.len());
    // No admissible pair is left between two unmatched endpoints.
    for &i in &m.unmatched_lidar {
        for &j in &m.unmatched_camera {
            assert!(a[i].distance(&b[j]) > gate);
        }
    }
}

/// Patch points and their projections through `h` with pixel noise.
pub fn detections(h: &Homography, n: usize, sigma: f64, r: &mut impl Rng) -> (Vec<PlanePoint>, Vec<PixelPoint>) {
    let noise = Normal::new(0.0, sigma).unwrap();
    let lidar: Vec<_> = (0..n).map(|_| patch_point(r)).collect();
    let camera = lidar
        .iter()
        .map(|p| {
            let q = h.project(p).unwrap();
            PixelPoint::new(q.u + noise.sample(r), q.v + noise.sample(r))
        })
        .collect();
    (lidar, camera)
}

/// Central differences with a step scaled to each entry's sensitivity.
pub fn numeric_gradient(h: &Homography, delta: &Matrix3<f64>, pairs: &[Correspondence]) -> [f64; 9] {
    let mut g = [0.0; 9];
    for (k, gk) in g.iter_mut().enumerate() {
        let (i, j) = (k / 3, k % 3);
        let step = 1e-6 * delta[(i, j)].abs().max(1e-3);
        let mut plus = *delta;
        let mut minus = *delta;
        plus[(i, j)] += step;
        minus[(i, j)] -= step;
        let lp = reprojection_loss(h, &plus, pairs).unwrap();
        let lm = reprojection_loss(h, &minus, pairs).unwrap();
        *gk = (lp - lm) / (2.0 * step);
    }
    g
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Relative error of the analytic correction gradient at a random point
/// near the identity, for scene `seed`.
pub fn gradient_relative_error(seed: u64) -> f64 {
    let h = random_homography(seed, &SceneConfig::default());
    let mut r = rng(seed);
    let (lidar, camera) = detections(&h, 40, 1.0, &mut r);
    let pairs = implicit_pairs(&h, &lidar, &camera, &MatchGate::default(), 0);
    assert!(pairs.len() >= 30);
    let delta = Matrix3::from_fn(|i, j| {
        let base = if i == j { 1.0 } else { 0.0 };
        let scale = if i == 2 && j < 2 { 1e-5 } else { 1e-3 };
        base + r.random_range(-scale..scale)
    });
    let analytic = reprojection_loss_gradient(&h, &delta, &pairs).unwrap();
    let numeric = numeric_gradient(&h, &delta, &pairs);
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(&numeric)
}

/// Max entry error of the correction fit after a 2 px shift of the truth.
pub fn two_pixel_recovery_error(seed: u64) -> f64 {
    let h_true = random_homography(seed, &SceneConfig::default());
    let (lidar, camera) = detections(&h_true, 80, 0.0, &mut rng(seed));
    let shift = Matrix3::new(1.0, 0.0, 2.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
    let h = Homography::new(shift * h_true.matrix()).unwrap();
    let res = fit_correction(&h, &lidar, &camera, &CorrectionConfig::default()).unwrap();
    assert!(res.h_star.max_abs_diff(&h.compose(&res.h_delta).unwrap()) < 1e-12);
    for (p, c) in lidar.iter().zip(&camera) {
        assert!(res.h_star.project(p).unwrap().distance(c) < 1e-6);
    }
    res.h_star.max_abs_diff(&h_true)
}

/// Correction loss trace on a jittered start over a simulated stream.
pub fn simulated_loss_trace(seed: u64) -> Vec<f64> {
    let scene = SceneConfig {
        seed,
        n_frames: 200,
        ..Default::default()
    };
    let (sims, gt) = generate(&scene).unwrap();
    let frames: Vec<Frame> = sims.into_iter().map(|s| s.frame).collect();
    let mut r = rng(seed);
    let jitter = Matrix3::new(1.0, 0.0, r.random_range(-3.0..3.0), 0.0, 1.0, r.random_range(-3.0..3.0), 0.0, 0.0, 1.0);
    let h = Homography::new(jitter * gt.h_true.matrix()).unwrap();
    let res = fit_correction_frames(&h, &frames, &CorrectionConfig::default()).unwrap();
    assert!(res.h_star.max_abs_diff(&h.compose(&res.h_delta).unwrap()) < 1e-12);
    res.loss_trace
}
