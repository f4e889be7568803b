//! Dataset ingestion: point clouds, trajectories, image sequences and the
//! float-map depth format.

mod pfm;
mod ply;
mod png;
mod sequence;
mod tum;

pub use pfm::{read_pfm, write_pfm};
pub use ply::{load_ply, save_cloud_ply, save_map_ply, PlyContent};
pub use png::{load_png, save_gray_png, save_rgb_png};
pub use sequence::{load_sequence, SequenceDataset};
pub use tum::{load_trajectory, parse_camera_file, parse_rgb_association, save_trajectory};

use nalgebra::Vector3;
use std::path::PathBuf;
use thiserror::Error;

use crate::geometry::SE3Pose;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing file: {path}")]
    MissingFile { path: PathBuf },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}:{line}: timestamps out of order")]
    TimestampDisorder { path: PathBuf, line: usize },
    #[error("malformed ply header: {reason}")]
    PlyHeader { reason: String },
    #[error("ply body truncated: expected {expected} vertices, data for {got}")]
    PlyTruncated { expected: usize, got: usize },
    #[error("ply vertex schema not recognized: {reason}")]
    PlyUnknownSchema { reason: String },
    #[error("image {path}: {reason}")]
    Image { path: PathBuf, reason: String },
    #[error("image {path} is {got:?} but camera.txt declares {expected:?}")]
    ImageSizeMismatch {
        path: PathBuf,
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("trajectory timestamps must be strictly increasing")]
    NonMonotoneTimestamps,
}

/// One raw cloud point, with optional color.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSample {
    pub position: Vector3<f64>,
    pub color: Option<[f64; 3]>,
}

/// Time-stamped pose sequence with strictly increasing timestamps. Poses are
/// camera-to-world.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    entries: Vec<(f64, SE3Pose)>,
}

impl Trajectory {
    pub fn new(entries: Vec<(f64, SE3Pose)>) -> Result<Self, DataError> {
        for pair in entries.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(DataError::NonMonotoneTimestamps);
            }
        }
        Ok(Self { entries })
    }

    pub fn empty() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, timestamp: f64, pose: SE3Pose) -> Result<(), DataError> {
        if let Some(&(last, _)) = self.entries.last() {
            if timestamp <= last {
                return Err(DataError::NonMonotoneTimestamps);
            }
        }
        self.entries.push((timestamp, pose));
        Ok(())
    }

    pub fn entries(&self) -> &[(f64, SE3Pose)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&(f64, SE3Pose)> {
        self.entries.get(index)
    }

    /// Index of the entry whose timestamp is nearest to `t`.
    pub fn nearest(&self, t: f64) -> Option<usize> {
        if self.entries.is_empty() {
            return None;
        }
        let idx = self
            .entries
            .partition_point(|&(stamp, _)| stamp < t)
            .min(self.entries.len() - 1);
        let mut best = idx;
        if idx > 0 && (self.entries[idx - 1].0 - t).abs() < (self.entries[idx].0 - t).abs() {
            best = idx - 1;
        }
        Some(best)
    }

    /// Total path length of the translation track, in meters.
    pub fn path_length(&self) -> f64 {
        self.entries
            .windows(2)
            .map(|w| (w[1].1.translation() - w[0].1.translation()).norm())
            .sum()
    }
}
