//! File formats: JSON Lines frames, JSON matrices and pair sets, CSV logs.
//!
//! Every parser rejects unknown fields and non-finite coordinates, and every
//! writer is deterministic so identical inputs give identical bytes.

use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};
use crate::geometry::{Correspondence, Homography, PixelPoint, PlanePoint, Source};
use crate::iterative::{CheckpointRecord, Frame};
use crate::pipeline::{Histogram, HISTOGRAM_BUCKETS};

fn parse_err(what: &str, e: impl std::fmt::Display) -> CalibError {
    CalibError::Parse(format!("{what}: {e}"))
}

fn finite2(p: [f64; 2], what: &str) -> Result<[f64; 2]> {
    if p[0].is_finite() && p[1].is_finite() {
        Ok(p)
    } else {
        Err(CalibError::Parse(format!("{what}: non-finite coordinate")))
    }
}

/// One line of a frames file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub frame_id: u64,
    pub lidar: Vec<[f64; 2]>,
    pub camera: Vec<[f64; 2]>,
}

impl From<&Frame> for FrameRecord {
    fn from(f: &Frame) -> Self {
        Self {
            frame_id: f.frame_id,
            lidar: f.lidar_centers.iter().map(|p| [p.x, p.y]).collect(),
            camera: f.camera_centers.iter().map(|p| [p.u, p.v]).collect(),
        }
    }
}

impl TryFrom<FrameRecord> for Frame {
    type Error = CalibError;

    fn try_from(r: FrameRecord) -> Result<Self> {
        let lidar_centers = r
            .lidar
            .into_iter()
            .map(|p| finite2(p, "lidar").map(|[x, y]| PlanePoint::new(x, y)))
            .collect::<Result<_>>()?;
        let camera_centers = r
            .camera
            .into_iter()
            .map(|p| finite2(p, "camera").map(|[u, v]| PixelPoint::new(u, v)))
            .collect::<Result<_>>()?;
        Ok(Frame {
            frame_id: r.frame_id,
            lidar_centers,
            camera_centers,
        })
    }
}

/// Parses a single JSON Lines record.
pub fn parse_frame_line(line: &str) -> Result<Frame> {
    let rec: FrameRecord = serde_json::from_str(line).map_err(|e| parse_err("frame", e))?;
    rec.try_into()
}

/// Reads frames; blank lines are ignored. Errors name the 1-based line.
pub fn read_frames(reader: impl BufRead) -> Result<Vec<Frame>> {
    let mut frames = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let frame = parse_frame_line(&line).map_err(|e| match e {
            CalibError::Parse(m) => CalibError::Parse(format!("line {}: {m}", i + 1)),
            other => other,
        })?;
        frames.push(frame);
    }
    Ok(frames)
}

pub fn write_frames(mut w: impl Write, frames: &[Frame]) -> Result<()> {
    for f in frames {
        serde_json::to_writer(&mut w, &FrameRecord::from(f)).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixFile {
    pub h: Homography,
}

pub fn parse_homography(s: &str) -> Result<Homography> {
    let f: MatrixFile = serde_json::from_str(s).map_err(|e| parse_err("matrix", e))?;
    Ok(f.h)
}

pub fn homography_json(h: &Homography) -> String {
    to_json(&MatrixFile { h: *h })
}

/// Parallel arrays of pair endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairsFile {
    pub lidar: Vec<[f64; 2]>,
    pub camera: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_ids: Option<Vec<u64>>,
}

impl PairsFile {
    pub fn from_pairs(pairs: &[Correspondence]) -> Self {
        Self {
            lidar: pairs.iter().map(|p| [p.lidar.x, p.lidar.y]).collect(),
            camera: pairs.iter().map(|p| [p.pixel.u, p.pixel.v]).collect(),
            frame_ids: Some(pairs.iter().map(|p| p.frame_id).collect()),
        }
    }

    pub fn into_pairs(self, source: Source) -> Result<Vec<Correspondence>> {
        if self.lidar.len() != self.camera.len() {
            return Err(CalibError::Parse(format!(
                "pairs: {} lidar points but {} camera points",
                self.lidar.len(),
                self.camera.len()
            )));
        }
        if let Some(ids) = &self.frame_ids {
            if ids.len() != self.lidar.len() {
                return Err(CalibError::Parse(format!(
                    "pairs: {} frame ids for {} pairs",
                    ids.len(),
                    self.lidar.len()
                )));
            }
        }
        let ids = self.frame_ids.unwrap_or_default();
        self.lidar
            .into_iter()
            .zip(self.camera)
            .enumerate()
            .map(|(i, (l, c))| {
                let [x, y] = finite2(l, "lidar")?;
                let [u, v] = finite2(c, "camera")?;
                let frame_id = ids.get(i).copied().unwrap_or(0);
                Ok(Correspondence::new(PlanePoint::new(x, y), PixelPoint::new(u, v), frame_id, source))
            })
            .collect()
    }
}

pub fn parse_pairs(s: &str, source: Source) -> Result<Vec<Correspondence>> {
    let f: PairsFile = serde_json::from_str(s).map_err(|e| parse_err("pairs", e))?;
    f.into_pairs(source)
}

pub fn pairs_json(pairs: &[Correspondence]) -> String {
    to_json(&PairsFile::from_pairs(pairs))
}

pub fn parse_ground_truth(s: &str) -> Result<crate::sim::GroundTruth> {
    serde_json::from_str(s).map_err(|e| parse_err("ground truth", e))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("in-memory serialization cannot fail");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct CheckpointRow {
    frame_id: u64,
    err_new: Option<f64>,
    err_best: Option<f64>,
    updated: &'static str,
    skipped: Option<crate::iterative::SkipReason>,
}

/// Checkpoint log; `updated` is `Yes`/`No`, missing errors are blank.
pub fn checkpoints_csv(records: &[CheckpointRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(CheckpointRow {
            frame_id: r.frame_id,
            err_new: r.err_new,
            err_best: r.err_best,
            updated: if r.updated { "Yes" } else { "No" },
            skipped: r.skipped,
        })
        .map_err(|e| parse_err("checkpoint csv", e))?;
    }
    finish_csv(w)
}

#[derive(Serialize)]
struct HistogramRow {
    lower_px: usize,
    upper_px: Option<usize>,
    count: usize,
}

/// One row per one-pixel bucket plus a final open-ended overflow row.
pub fn histogram_csv(h: &Histogram) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let rows = h
        .counts
        .iter()
        .enumerate()
        .map(|(i, &count)| HistogramRow {
            lower_px: i,
            upper_px: Some(i + 1),
            count,
        })
        .chain(std::iter::once(HistogramRow {
            lower_px: HISTOGRAM_BUCKETS,
            upper_px: None,
            count: h.overflow,
        }));
    for row in rows {
        w.serialize(row).map_err(|e| parse_err("histogram csv", e))?;
    }
    finish_csv(w)
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| parse_err("csv", e))?;
    String::from_utf8(bytes).map_err(|e| parse_err("csv", e))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        CalibError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, contents).map_err(|e| {
        CalibError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}
