//! Command-line front end. Every command is a thin wrapper over library
//! calls, so outputs match direct invocation byte for byte.

use std::collections::BTreeSet;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::correction::fit_correction_frames;
use crate::error::{CalibError, Result};
use crate::geometry::{Correspondence, Homography, Source};
use crate::io;
use crate::iterative::{self, CalibrationState, Frame};
use crate::pipeline::{coarse_calibrate, evaluate, ground_truth_pairs, holdout_frames, prepare_experiment, run_full};
use crate::sampling::Parity;
use crate::sim::{generate, mix_seed, oracle_pairs};

/// Exit status for invalid configuration or input.
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_IO: i32 = 3;
/// Exit status for algorithmic failures such as consensus failure.
pub const EXIT_ALGORITHM: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "calibrefine", version, about = "LiDAR-camera homography calibration and refinement")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides scene.seed (and the sweep seeds for `run`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Matching gate in pixels for refinement and correction.
    #[arg(long, global = true)]
    pub gate: Option<f64>,
    /// Frames between recalibrations.
    #[arg(long, global = true)]
    pub interval: Option<usize>,
    /// Block grid, `N` or `NxM`.
    #[arg(long, global = true, value_parser = parse_blocks)]
    pub blocks: Option<(u32, u32)>,
    /// Checkerboard class of blocks to keep: `even` or `odd`.
    #[arg(long, global = true)]
    pub parity: Option<Parity>,
    /// RANSAC inlier threshold in pixels.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Iterative,
    Correction,
    Both,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a scene: frames, oracle pairs, held-out pairs, ground truth.
    Simulate {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Coarse homography from oracle pairs.
    Calibrate {
        #[arg(long)]
        frames: Option<PathBuf>,
        #[arg(long)]
        oracle: Option<PathBuf>,
        /// Output matrix JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the inlier pairs here.
        #[arg(long)]
        inliers: Option<PathBuf>,
    },
    /// Iterative and/or correction refinement of a matrix over a frame stream.
    Refine {
        #[arg(long)]
        frames: Option<PathBuf>,
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::Both)]
        mode: Mode,
        /// Pairs that seed the accumulated set (e.g. coarse inliers).
        #[arg(long)]
        init_pairs: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reprojection metrics of a matrix on a pair file.
    Evaluate {
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full simulated pipeline over the configured seed sweep.
    Run {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for the seed sweep.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn parse_blocks(s: &str) -> std::result::Result<(u32, u32), String> {
    let parse = |t: &str| t.trim().parse::<u32>().map_err(|e| format!("invalid block count '{t}': {e}"));
    match s.split_once(['x', 'X']) {
        Some((a, b)) => Ok((parse(a)?, parse(b)?)),
        None => {
            let n = parse(s)?;
            Ok((n, n))
        }
    }
}

pub fn exit_code(e: &CalibError) -> i32 {
    match e.root() {
        CalibError::InvalidConfig(_) | CalibError::Parse(_) | CalibError::EmptySet | CalibError::HeldOutViolation(_) => {
            EXIT_INVALID
        }
        CalibError::Io(_) => EXIT_IO,
        _ => EXIT_ALGORITHM,
    }
}

impl Cli {
    /// Loads the config file (if any) and applies flag overrides.
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::parse(&io::read_to_string(p)?)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.scene.seed = s;
            cfg.sweep.seeds = vec![s];
        }
        if let Some(g) = self.gate {
            cfg.refine.gate = g;
            cfg.correction.gate = g;
        }
        if let Some(n) = self.interval {
            cfg.refine.recalib_interval = n;
        }
        if let Some((bx, by)) = self.blocks {
            cfg.grid.blocks_x = bx;
            cfg.grid.blocks_y = by;
        }
        if let Some(p) = self.parity {
            cfg.grid.parity = p;
        }
        if let Some(t) = self.threshold {
            cfg.ransac.inlier_threshold = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn require(flag: Option<&PathBuf>, fallback: Option<&PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or(fallback)
        .cloned()
        .ok_or_else(|| CalibError::InvalidConfig(format!("missing --{name} (or paths.{name} in the config)")))
}

fn read_frames(path: &Path) -> Result<Vec<Frame>> {
    let file = std::fs::File::open(path)
        .map_err(|e| CalibError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    io::read_frames(BufReader::new(file))
}

fn read_matrix(path: &Path) -> Result<Homography> {
    io::parse_homography(&io::read_to_string(path)?)
}

fn read_pairs(path: &Path, source: Source) -> Result<Vec<Correspondence>> {
    io::parse_pairs(&io::read_to_string(path)?, source)
}

/// Executes the parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.resolve_config()?;
    let paths = &cfg.paths;
    match &cli.command {
        Command::Simulate { out } => cmd_simulate(&cfg, &require(out.as_ref(), paths.out.as_ref(), "out")?),
        Command::Calibrate {
            frames,
            oracle,
            out,
            inliers,
        } => cmd_calibrate(
            &cfg,
            &require(frames.as_ref(), paths.frames.as_ref(), "frames")?,
            &require(oracle.as_ref(), paths.oracle.as_ref(), "oracle")?,
            &require(out.as_ref(), paths.matrix.as_ref(), "out")?,
            inliers.as_deref(),
        ),
        Command::Refine {
            frames,
            matrix,
            mode,
            init_pairs,
            out,
        } => cmd_refine(
            &cfg,
            &require(frames.as_ref(), paths.frames.as_ref(), "frames")?,
            &require(matrix.as_ref(), paths.matrix.as_ref(), "matrix")?,
            *mode,
            init_pairs.as_deref(),
            &require(out.as_ref(), paths.out.as_ref(), "out")?,
        ),
        Command::Evaluate { matrix, pairs, out } => cmd_evaluate(
            &require(matrix.as_ref(), paths.matrix.as_ref(), "matrix")?,
            &require(pairs.as_ref(), paths.pairs.as_ref(), "pairs")?,
            out.as_deref().or(paths.out.as_deref()),
        ),
        Command::Run { out, jobs } => cmd_run(&cfg, &require(out.as_ref(), paths.out.as_ref(), "out")?, *jobs),
    }
}

/// Writes `frames.jsonl` (all frames), `train_frames.jsonl`,
/// `oracle_pairs.json` (training frames only), `eval_pairs.json`
/// (noise-free pairs from held-out frames) and `ground_truth.json`.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let scene = &cfg.scene;
    let (sims, gt) = generate(scene)?;
    let ids: Vec<u64> = sims.iter().map(|s| s.frame.frame_id).collect();
    let held_out = holdout_frames(&ids, cfg.pipeline.eval_fraction, mix_seed(scene.seed, cfg.pipeline.holdout_seed));

    let all: Vec<Frame> = sims.iter().map(|s| s.frame.clone()).collect();
    let train: Vec<Frame> = all.iter().filter(|f| !held_out.contains(&f.frame_id)).cloned().collect();
    let oracle: Vec<Correspondence> = sims
        .iter()
        .filter(|s| !held_out.contains(&s.frame.frame_id))
        .flat_map(|s| oracle_pairs(s, scene.oracle_error_rate, scene.seed))
        .map(|p| p.pair)
        .collect();
    let eval = ground_truth_pairs(&gt, &held_out);

    let mut buf = Vec::new();
    io::write_frames(&mut buf, &all)?;
    io::write_file(&out.join("frames.jsonl"), &buf)?;
    buf.clear();
    io::write_frames(&mut buf, &train)?;
    io::write_file(&out.join("train_frames.jsonl"), &buf)?;
    io::write_file(&out.join("oracle_pairs.json"), io::pairs_json(&oracle).as_bytes())?;
    io::write_file(&out.join("eval_pairs.json"), io::pairs_json(&eval).as_bytes())?;
    io::write_file(&out.join("ground_truth.json"), io::to_json(&gt).as_bytes())?;
    println!(
        "simulated {} frames ({} training, {} held out), {} oracle pairs, {} evaluation pairs",
        all.len(),
        train.len(),
        held_out.len(),
        oracle.len(),
        eval.len()
    );
    Ok(())
}

/// Oracle pairs from the first `pipeline.coarse_frames` frames of the
/// stream, as the library pipeline selects them.
fn coarse_pairs(cfg: &RunConfig, frames: &[Frame], oracle: Vec<Correspondence>) -> Vec<Correspondence> {
    let span = match cfg.pipeline.coarse_frames {
        0 => frames.len(),
        n => n.min(frames.len()),
    };
    let ids: BTreeSet<u64> = frames[..span].iter().map(|f| f.frame_id).collect();
    oracle.into_iter().filter(|p| ids.contains(&p.frame_id)).collect()
}

pub fn cmd_calibrate(cfg: &RunConfig, frames: &Path, oracle: &Path, out: &Path, inliers: Option<&Path>) -> Result<()> {
    let frames = read_frames(frames)?;
    let pairs = coarse_pairs(cfg, &frames, read_pairs(oracle, Source::Oracle)?);
    if pairs.is_empty() {
        return Err(CalibError::EmptySet);
    }
    let coarse = coarse_calibrate(&pairs, &cfg.coarse_grid(), &cfg.ransac).map_err(|e| {
        log::error!("coarse calibration failed on {} oracle pairs: {e}", pairs.len());
        e
    })?;
    io::write_file(out, io::homography_json(&coarse.h).as_bytes())?;
    if let Some(path) = inliers {
        let inlier_pairs: Vec<_> = coarse.inliers.iter().map(|&i| pairs[i]).collect();
        io::write_file(path, io::pairs_json(&inlier_pairs).as_bytes())?;
    }
    let r = &coarse.ransac.inlier_report;
    println!(
        "coarse: {} pairs, {} sampled, {} inliers, aed {:.6} px, rmse {:.6} px",
        pairs.len(),
        coarse.sampled.len(),
        coarse.inliers.len(),
        r.aed,
        r.rmse
    );
    Ok(())
}

/// Writes `matrix.json` (final matrix) plus `iterative_matrix.json` and
/// `checkpoints.csv` for the iterative stage and `correction.json` for the
/// correction stage.
pub fn cmd_refine(
    cfg: &RunConfig,
    frames: &Path,
    matrix: &Path,
    mode: Mode,
    init_pairs: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let frames = read_frames(frames)?;
    let h0 = read_matrix(matrix)?;
    let mut h = h0;

    if matches!(mode, Mode::Iterative | Mode::Both) {
        let rc = cfg.refine_config();
        let seeds = match init_pairs {
            Some(p) => read_pairs(p, Source::Oracle)?,
            None => Vec::new(),
        };
        let state = iterative::run_from(CalibrationState::seeded(h0, &seeds, &rc), &frames, &rc);
        if !state.accumulated.is_empty() {
            let before = rc.metric.evaluate(&h0, &state.accumulated)?;
            let after = rc.metric.evaluate(&state.h_best, &state.accumulated)?;
            if after > before {
                return Err(CalibError::DegenerateConfiguration(format!(
                    "iterative refinement degraded the guard metric ({before} -> {after})"
                )));
            }
        }
        h = state.h_best;
        io::write_file(&out.join("iterative_matrix.json"), io::homography_json(&h).as_bytes())?;
        io::write_file(&out.join("checkpoints.csv"), io::checkpoints_csv(&state.checkpoints)?.as_bytes())?;
        let updates = state.checkpoints.iter().filter(|c| c.updated).count();
        println!(
            "iterative: {} frames, {} checkpoints ({} updates), {} accumulated pairs",
            state.frames_seen,
            state.checkpoints.len(),
            updates,
            state.accumulated.len()
        );
    }

    if matches!(mode, Mode::Correction | Mode::Both) {
        let result = fit_correction_frames(&h, &frames, &cfg.correction_config())?;
        if let (Some(first), Some(last)) = (result.loss_trace.first(), result.loss_trace.last()) {
            if last > first {
                return Err(CalibError::DegenerateConfiguration(format!(
                    "correction increased the loss ({first} -> {last})"
                )));
            }
        }
        h = result.h_star;
        io::write_file(&out.join("correction.json"), io::to_json(&result).as_bytes())?;
        println!(
            "correction: {} pairs, loss {:?} -> {:?} px^2",
            result.pairs_used,
            result.loss_trace.first(),
            result.loss_trace.last()
        );
    }

    io::write_file(&out.join("matrix.json"), io::homography_json(&h).as_bytes())?;
    Ok(())
}

/// Prints metrics and, with an output directory, writes `report.json`
/// and `histogram.csv`.
pub fn cmd_evaluate(matrix: &Path, pairs: &Path, out: Option<&Path>) -> Result<()> {
    let h = read_matrix(matrix)?;
    let pairs = read_pairs(pairs, Source::Manual)?;
    let e = evaluate(&h, &pairs)?;
    println!("n {} aed {:.6} px rmse {:.6} px", e.report.n, e.report.aed, e.report.rmse);
    if let Some(dir) = out {
        io::write_file(&dir.join("report.json"), io::to_json(&e.report).as_bytes())?;
        io::write_file(&dir.join("histogram.csv"), io::histogram_csv(&e.histogram)?.as_bytes())?;
    }
    Ok(())
}

/// Runs the simulated pipeline for every sweep seed. Each seed writes
/// `seed_<s>/{report.json, checkpoints.csv, histogram_<stage>.csv}`;
/// `summary.csv` lists held-out AED per stage in sweep order.
pub fn cmd_run(cfg: &RunConfig, out: &Path, jobs: usize) -> Result<()> {
    let seeds = cfg.sweep_seeds();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CalibError::InvalidConfig(format!("--jobs: {e}")))?;
    let pcfg = cfg.pipeline_config();
    let results: Vec<Result<(u64, [f64; 3])>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let scene = crate::sim::SceneConfig { seed, ..cfg.scene };
                let exp = prepare_experiment(&scene, &pcfg)?;
                let report = run_full(&exp.train, &exp.oracle, &exp.eval_pairs, &pcfg)?;
                let dir = out.join(format!("seed_{seed}"));
                io::write_file(&dir.join("report.json"), io::to_json(&report).as_bytes())?;
                io::write_file(&dir.join("checkpoints.csv"), io::checkpoints_csv(&report.checkpoints)?.as_bytes())?;
                for (name, hist) in [
                    ("coarse", &report.histograms.coarse),
                    ("iterative", &report.histograms.iterative),
                    ("correction", &report.histograms.correction),
                ] {
                    io::write_file(&dir.join(format!("histogram_{name}.csv")), io::histogram_csv(hist)?.as_bytes())?;
                }
                let m = &report.stage_metrics;
                Ok((seed, [m.coarse.aed, m.iterative.aed, m.correction.aed]))
            })
            .collect()
    });

    let mut w = csv::Writer::from_writer(Vec::new());
    let header = ["seed", "coarse_aed", "iterative_aed", "correction_aed"];
    w.write_record(header).map_err(|e| CalibError::Parse(e.to_string()))?;
    let mut failures = Vec::new();
    for (seed, r) in seeds.iter().zip(results) {
        match r {
            Ok((s, aed)) => {
                println!("seed {s}: aed coarse {:.6} iterative {:.6} correction {:.6}", aed[0], aed[1], aed[2]);
                w.serialize((s, aed[0], aed[1], aed[2]))
                    .map_err(|e| CalibError::Parse(e.to_string()))?;
            }
            Err(e) => {
                eprintln!("seed {seed}: {e}");
                failures.push(e);
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| CalibError::Parse(e.to_string()))?;
    io::write_file(&out.join("summary.csv"), &bytes)?;
    match failures.into_iter().next() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
