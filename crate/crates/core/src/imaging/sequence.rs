//! Ground-truth synthetic sequences and their on-disk layout.
//!
//! A sequence directory holds `frame_0000.pgm`, `frame_0001.pgm`, ... and an
//! optional `truth.csv` with one row per frame:
//! `frame,h11,h12,h13,h21,h22,h23,h31,h32,h33,tx,ty,tz,rx,ry,rz,gain`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use super::pgm::{read_pgm, write_pgm, PgmError};
use super::{GrayImage, TemplateRegion};
use crate::geometry::{
    exp_so3, homography_from_pose, CameraIntrinsics, GeometryError, Homography, PoseVector,
    RigidTransform,
};
use crate::io::write_atomic;

pub const TRUTH_FILE: &str = "truth.csv";

const TRUTH_HEADER: [&str; 17] = [
    "frame", "h11", "h12", "h13", "h21", "h22", "h23", "h31", "h32", "h33", "tx", "ty", "tz", "rx",
    "ry", "rz", "gain",
];

#[derive(Debug, Error)]
pub enum SequenceError {
    #[error("motion schedule has {motions} entries but gain schedule has {gains}")]
    ScheduleMismatch { motions: usize, gains: usize },
    #[error("gain {0} must be finite and positive")]
    InvalidGain(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("sequence directory {0} not found or contains no frames")]
    Missing(PathBuf),
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: PgmError },
    #[error("truth file: {0}")]
    Truth(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Frames rendered from a base image under known cumulative motion.
#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub frames: Vec<GrayImage>,
    pub truth_homographies: Vec<Homography>,
    pub truth_poses: Vec<RigidTransform>,
    pub intensity_gains: Vec<f64>,
}

impl SyntheticSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn truth(&self) -> Vec<TruthRecord> {
        (0..self.len())
            .map(|i| TruthRecord {
                frame: i,
                homography: self.truth_homographies[i],
                transform: self.truth_poses[i],
                gain: self.intensity_gains[i],
            })
            .collect()
    }
}

/// Renders frame `i` as the base warped by the composition of motions
/// `0..i`, scaled by `gain_schedule[i-1]`. Frame 0 is the base itself.
///
/// Every frame is resampled directly from the base so interpolation blur
/// does not compound along the sequence.
pub fn generate_sequence(
    base: &GrayImage,
    region: &TemplateRegion,
    intrinsics: &CameraIntrinsics,
    motion_schedule: &[PoseVector],
    gain_schedule: &[f64],
) -> Result<SyntheticSequence, SequenceError> {
    if motion_schedule.len() != gain_schedule.len() {
        return Err(SequenceError::ScheduleMismatch {
            motions: motion_schedule.len(),
            gains: gain_schedule.len(),
        });
    }
    if let Some(&g) = gain_schedule.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
        return Err(SequenceError::InvalidGain(g));
    }
    let n = motion_schedule.len() + 1;
    let mut seq = SyntheticSequence {
        frames: Vec::with_capacity(n),
        truth_homographies: Vec::with_capacity(n),
        truth_poses: Vec::with_capacity(n),
        intensity_gains: Vec::with_capacity(n),
    };
    seq.frames.push(base.clone());
    seq.truth_homographies.push(Homography::identity());
    seq.truth_poses.push(RigidTransform::identity());
    seq.intensity_gains.push(1.0);

    let mut cumulative = RigidTransform::identity();
    for (motion, &gain) in motion_schedule.iter().zip(gain_schedule) {
        cumulative = RigidTransform::from_pose(motion).compose(&cumulative);
        let h = homography_from_pose(&cumulative, region.plane(), intrinsics)?;
        let frame = render(base, &h.inverse()?, gain);
        seq.frames.push(frame);
        seq.truth_homographies.push(h);
        seq.truth_poses.push(cumulative);
        seq.intensity_gains.push(gain);
    }
    Ok(seq)
}

/// `out(p) = clamp(gain · base(inverse(p)))`, zero where `inverse(p)` leaves
/// the base image.
fn render(base: &GrayImage, inverse: &Homography, gain: f64) -> GrayImage {
    GrayImage::from_fn(base.width(), base.height(), |x, y| {
        match inverse.warp_point(x as f64, y as f64) {
            Ok((u, v)) => {
                let (value, ok) = base.sample_bilinear(u, v);
                if ok {
                    (gain * value).clamp(0.0, 1.0) as f32
                } else {
                    0.0
                }
            }
            Err(_) => 0.0,
        }
    })
}

/// One row of `truth.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRecord {
    pub frame: usize,
    pub homography: Homography,
    pub transform: RigidTransform,
    pub gain: f64,
}

/// Frames read from a sequence directory, with truth when present.
#[derive(Debug, Clone)]
pub struct LoadedSequence {
    pub frames: Vec<GrayImage>,
    pub truth: Option<Vec<TruthRecord>>,
}

pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("frame_{index:04}.pgm"))
}

/// Writes frames as `frame_%04d.pgm` and the truth table as `truth.csv`.
pub fn write_sequence(dir: &Path, frames: &[GrayImage], truth: &[TruthRecord]) -> Result<(), SequenceError> {
    fs::create_dir_all(dir)?;
    for (i, frame) in frames.iter().enumerate() {
        let path = frame_path(dir, i);
        write_pgm(&path, frame).map_err(|source| SequenceError::Image { path, source })?;
    }
    write_atomic(&dir.join(TRUTH_FILE), |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(TRUTH_HEADER)?;
        for rec in truth {
            let pose = rec.transform.to_full_pose();
            let mut row = Vec::with_capacity(17);
            row.push(rec.frame.to_string());
            row.extend(rec.homography.to_row_major().iter().map(f64::to_string));
            row.extend(pose.iter().map(f64::to_string));
            row.push(rec.gain.to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    })?;
    Ok(())
}

/// Reads every `frame_*.pgm` in name order plus `truth.csv` if present.
pub fn read_sequence(dir: &Path) -> Result<LoadedSequence, SequenceError> {
    let missing = || SequenceError::Missing(dir.to_path_buf());
    let entries = fs::read_dir(dir).map_err(|_| missing())?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("frame_") && n.ends_with(".pgm"))
        })
        .collect();
    if paths.is_empty() {
        return Err(missing());
    }
    paths.sort();
    let frames = paths
        .into_iter()
        .map(|path| read_pgm(&path).map_err(|source| SequenceError::Image { path, source }))
        .collect::<Result<Vec<_>, _>>()?;
    let truth_path = dir.join(TRUTH_FILE);
    let truth = if truth_path.exists() {
        Some(read_truth(&truth_path)?)
    } else {
        None
    };
    Ok(LoadedSequence { frames, truth })
}

fn read_truth(path: &Path) -> Result<Vec<TruthRecord>, SequenceError> {
    let bad = |msg: String| SequenceError::Truth(msg);
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if headers.iter().ne(TRUTH_HEADER.iter().copied()) {
        return Err(bad(format!("unexpected header {headers:?}")));
    }
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let nums: Vec<f64> = record
            .iter()
            .skip(1)
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| bad(format!("row {}: {e}", line + 1)))?;
        let frame: usize = record[0]
            .trim()
            .parse()
            .map_err(|e| bad(format!("row {}: {e}", line + 1)))?;
        let h = Matrix3::from_row_slice(&nums[0..9]);
        let homography = Homography::new(h).map_err(|e| bad(format!("row {}: {e}", line + 1)))?;
        let transform = RigidTransform::new(
            exp_so3(&Vector3::new(nums[12], nums[13], nums[14])),
            Vector3::new(nums[9], nums[10], nums[11]),
        );
        out.push(TruthRecord {
            frame,
            homography,
            transform,
            gain: nums[15],
        });
    }
    Ok(out)
}
