use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

use crate::data::PointSample;
use crate::gaussian::{Gaussian3D, GaussianMap};

use super::FitError;

/// Initial opacity of every Gaussian; high so the background cannot dominate
/// early renders.
pub const INITIAL_OPACITY: f64 = 0.8;

/// One Gaussian per cloud point: position from the point, opacity 0.8, color
/// from the point (uniform random when absent), per-axis scale log-uniform in
/// `[0.5·r̄, 2·r̄]` where r̄ is the cloud's mean nearest-neighbor distance,
/// random orientation. Deterministic for a given seed.
pub fn init_from_pointcloud(points: &[PointSample], seed: u64) -> Result<GaussianMap, FitError> {
    if points.is_empty() {
        return Err(FitError::EmptyCloud);
    }
    let mean_nn = mean_nearest_neighbor_distance(points)
        .unwrap_or(0.1)
        .max(1e-4);
    let (lo, hi) = ((0.5 * mean_nn).ln(), (2.0 * mean_nn).ln());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussians = points
        .iter()
        .map(|point| {
            let scale = Vector3::from_fn(|_, _| rng.random_range(lo..hi).exp());
            let rotation = random_unit_quaternion(&mut rng);
            let color = point.color.unwrap_or_else(|| {
                [
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                ]
            });
            Gaussian3D {
                position: point.position,
                scale,
                rotation,
                opacity: INITIAL_OPACITY,
                color,
            }
        })
        .collect();
    Ok(GaussianMap::new(gaussians))
}

/// Uniform random rotation (Shoemake's subgroup algorithm).
fn random_unit_quaternion(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    let u1: f64 = rng.random_range(0.0..1.0);
    let u2: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let u3: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    UnitQuaternion::new_normalize(nalgebra::Quaternion::new(
        a * u2.sin(),
        a * u2.cos(),
        b * u3.sin(),
        b * u3.cos(),
    ))
}

/// Mean distance to the nearest neighbor over the cloud, via a uniform hash
/// grid with expanding-shell search. `None` for single-point clouds.
fn mean_nearest_neighbor_distance(points: &[PointSample]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let mut min = Vector3::from_element(f64::INFINITY);
    let mut max = Vector3::from_element(f64::NEG_INFINITY);
    for p in points {
        min = min.inf(&p.position);
        max = max.sup(&p.position);
    }
    let extent = max - min;
    // Cell size from a brute-force neighbor-distance probe on a small evenly
    // strided subsample; robust to planar and linear clouds where a
    // volume-based estimate collapses.
    let stride = (points.len() / 128).max(1);
    let mut probe: Vec<f64> = points
        .iter()
        .step_by(stride)
        .map(|p| {
            points
                .iter()
                .filter(|q| !std::ptr::eq(*q, p))
                .map(|q| (q.position - p.position).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    probe.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cell = probe[probe.len() / 2].max(1e-9);

    let key = |p: &Vector3<f64>| {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(key(&p.position)).or_default().push(i);
    }

    let max_shell = ((extent.max() / cell).ceil() as i64 + 2).min(64);
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let (cx, cy, cz) = key(&p.position);
        let mut best = f64::INFINITY;
        for shell in 0..=max_shell {
            for dx in -shell..=shell {
                for dy in -shell..=shell {
                    for dz in -shell..=shell {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != shell {
                            continue;
                        }
                        if let Some(bucket) = grid.get(&(cx + dx, cy + dy, cz + dz)) {
                            for &j in bucket {
                                if j != i {
                                    best =
                                        best.min((points[j].position - p.position).norm());
                                }
                            }
                        }
                    }
                }
            }
            // Any point beyond the searched shells is at least shell·cell
            // away, so a closer hit is final.
            if best <= shell as f64 * cell {
                break;
            }
        }
        if !best.is_finite() {
            // Isolated outlier beyond the shell cap: brute force.
            best = points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| (q.position - p.position).norm())
                .fold(f64::INFINITY, f64::min);
        }
        total += best;
    }
    Some(total / points.len() as f64)
}
