use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::geometry::{PinholeCamera, SE3Pose};

use super::{DataError, Trajectory};

fn read_lines(path: &Path) -> Result<Vec<String>, DataError> {
    if !path.exists() {
        return Err(DataError::MissingFile {
            path: path.to_path_buf(),
        });
    }
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Read a trajectory file: one `timestamp tx ty tz qx qy qz qw` per line,
/// `#` comments allowed, timestamps strictly increasing.
pub fn load_trajectory(path: &Path) -> Result<Trajectory, DataError> {
    let mut entries: Vec<(f64, SE3Pose)> = Vec::new();
    for (line_index, line) in read_lines(path)?.iter().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = trimmed
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| DataError::Malformed {
                path: path.to_path_buf(),
                line: line_index + 1,
                reason: format!("expected 8 numbers, got `{trimmed}`"),
            })?;
        if fields.len() != 8 {
            return Err(DataError::Malformed {
                path: path.to_path_buf(),
                line: line_index + 1,
                reason: format!("expected 8 fields, got {}", fields.len()),
            });
        }
        let timestamp = fields[0];
        if let Some(&(last, _)) = entries.last() {
            if timestamp <= last {
                return Err(DataError::TimestampDisorder {
                    path: path.to_path_buf(),
                    line: line_index + 1,
                });
            }
        }
        let translation = Vector3::new(fields[1], fields[2], fields[3]);
        // File order is qx qy qz qw.
        let rotation = UnitQuaternion::new_normalize(Quaternion::new(
            fields[7], fields[4], fields[5], fields[6],
        ));
        entries.push((timestamp, SE3Pose::from_quaternion(rotation, translation)));
    }
    Trajectory::new(entries)
}

/// Write a trajectory in the same format, 9 decimal places throughout.
pub fn save_trajectory(path: &Path, trajectory: &Trajectory) -> Result<(), DataError> {
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = fs::File::create(path).map_err(io_err)?;
    for (timestamp, pose) in trajectory.entries() {
        let t = pose.translation();
        let q = pose.quaternion().quaternion().clone();
        writeln!(
            out,
            "{timestamp:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
            t.x, t.y, t.z, q.i, q.j, q.k, q.w
        )
        .map_err(io_err)?;
    }
    Ok(())
}

/// Parse an association file of `timestamp image_path` lines.
pub fn parse_rgb_association(path: &Path) -> Result<Vec<(f64, PathBuf)>, DataError> {
    let mut frames: Vec<(f64, PathBuf)> = Vec::new();
    for (line_index, line) in read_lines(path)?.iter().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let (Some(stamp), Some(rel)) = (tokens.next(), tokens.next()) else {
            return Err(DataError::Malformed {
                path: path.to_path_buf(),
                line: line_index + 1,
                reason: "expected `timestamp path`".to_string(),
            });
        };
        let timestamp: f64 = stamp.parse().map_err(|_| DataError::Malformed {
            path: path.to_path_buf(),
            line: line_index + 1,
            reason: format!("bad timestamp `{stamp}`"),
        })?;
        if let Some(&(last, _)) = frames.last() {
            if timestamp <= last {
                return Err(DataError::TimestampDisorder {
                    path: path.to_path_buf(),
                    line: line_index + 1,
                });
            }
        }
        frames.push((timestamp, PathBuf::from(rel)));
    }
    Ok(frames)
}

/// Parse `camera.txt`: a single `fx fy cx cy width height` line.
pub fn parse_camera_file(path: &Path) -> Result<PinholeCamera, DataError> {
    for (line_index, line) in read_lines(path)?.iter().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = trimmed
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| DataError::Malformed {
                path: path.to_path_buf(),
                line: line_index + 1,
                reason: format!("expected numbers, got `{trimmed}`"),
            })?;
        if fields.len() != 6 {
            return Err(DataError::Malformed {
                path: path.to_path_buf(),
                line: line_index + 1,
                reason: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        return PinholeCamera::new(
            fields[0],
            fields[1],
            fields[2],
            fields[3],
            fields[4] as usize,
            fields[5] as usize,
        )
        .map_err(|e| DataError::Malformed {
            path: path.to_path_buf(),
            line: line_index + 1,
            reason: e.to_string(),
        });
    }
    Err(DataError::Malformed {
        path: path.to_path_buf(),
        line: 0,
        reason: "no camera line found".to_string(),
    })
}
