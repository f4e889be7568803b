use nalgebra::{DMatrix, DVector, Vector6};

use crate::geometry::{ImagePyramid, PinholeCamera, SE3Pose};

use super::points::PATTERN;
use super::residual::{huber_energy, photometric_residual};
use super::{Keyframe, OdometryConfig, TrackError};

/// Outcome of tracking one frame against a keyframe.
#[derive(Debug, Clone)]
pub struct TrackResult {
    /// Host-to-current transform (points move host -> current frame).
    pub relative: SE3Pose,
    /// Final mean weighted Huber energy.
    pub energy: f64,
    /// Fraction of points whose center residual magnitude is below
    /// `3 · huber_delta`.
    pub inlier_fraction: f64,
    pub converged: bool,
    /// Mean pattern-center displacement in full-resolution pixels.
    pub mean_flow: f64,
    /// Estimated affine brightness pair `(a, b)`.
    pub affine: (f64, f64),
}

struct LevelStats {
    energy: f64,
    residual_count: usize,
    valid_points: usize,
    inliers: usize,
    flow_sum: f64,
}

struct NormalEquations {
    h: DMatrix<f64>,
    g: DVector<f64>,
    stats: LevelStats,
}

const MAX_BACKTRACKS: usize = 6;
const STEP_NORM_STOP: f64 = 1e-6;

/// Coarse-to-fine photometric alignment of `current` against `host`:
/// Gauss-Newton on the 6-dof twist (plus the affine pair when enabled),
/// coarsest level first, with step-halving so the energy never increases
/// across accepted steps.
pub fn track_frame(
    host: &Keyframe,
    current: &ImagePyramid,
    init: &SE3Pose,
    camera: &PinholeCamera,
    config: &OdometryConfig,
) -> Result<TrackResult, TrackError> {
    if host.points.len() < config.min_points {
        return Err(TrackError::TooFewHostPoints {
            have: host.points.len(),
        });
    }
    let dims = if config.estimate_affine { 8 } else { 6 };
    let mut relative = *init;
    let mut affine = (0.0f64, 0.0f64);
    let mut converged = false;

    let levels = host.pyramid.num_levels().min(current.num_levels());
    for level in (0..levels).rev() {
        let mut level_converged = false;
        let mut assembled = assemble(host, current, level, &relative, affine, camera, config);
        // Levenberg-Marquardt on the twist (and affine pair): raise the
        // damping until a step is downhill, relax it after acceptance. The
        // damping keeps weakly observable directions (forward motion against
        // distant fronto-parallel structure) from stalling the refinement.
        let mut lambda = 1e-4;
        for _ in 0..config.max_gn_iterations {
            let Some(current_eq) = assembled.as_ref() else {
                break;
            };
            if current_eq.stats.residual_count == 0 {
                break;
            }
            let mut accepted = false;
            for _ in 0..=MAX_BACKTRACKS {
                let mut damped = current_eq.h.clone();
                for i in 0..dims {
                    damped[(i, i)] = damped[(i, i)] * (1.0 + lambda) + 1e-12;
                }
                let Some(chol) = damped.cholesky() else {
                    lambda = (lambda * 10.0).min(1e8);
                    continue;
                };
                let step = chol.solve(&(-&current_eq.g));
                let twist = Vector6::from_fn(|i, _| step[i]);
                let candidate_pose = SE3Pose::exp(&twist).compose(&relative);
                let candidate_affine = if dims == 8 {
                    (affine.0 + step[6], affine.1 + step[7])
                } else {
                    affine
                };
                let candidate = assemble(
                    host,
                    current,
                    level,
                    &candidate_pose,
                    candidate_affine,
                    camera,
                    config,
                );
                let improves = match (&candidate, &assembled) {
                    (Some(new), Some(old)) => {
                        mean_energy(&new.stats) < mean_energy(&old.stats)
                    }
                    _ => false,
                };
                if improves {
                    relative = candidate_pose;
                    affine = candidate_affine;
                    assembled = candidate;
                    accepted = true;
                    lambda = (lambda / 3.0).max(1e-7);
                    if step.norm() < STEP_NORM_STOP {
                        level_converged = true;
                    }
                    break;
                }
                lambda = (lambda * 10.0).min(1e8);
            }
            if !accepted {
                level_converged = true; // no downhill step left at this level
            }
            if !accepted || level_converged {
                break;
            }
        }
        if level == 0 {
            converged = level_converged;
        }
    }

    let Some(final_eq) = assemble(host, current, 0, &relative, affine, camera, config) else {
        return Err(TrackError::TrackingLost {
            frame: 0,
            reason: "no point projects into the current frame".to_string(),
        });
    };
    let stats = final_eq.stats;
    let energy = mean_energy(&stats);
    let inlier_fraction = if stats.valid_points == 0 {
        0.0
    } else {
        stats.inliers as f64 / stats.valid_points as f64
    };
    if !energy.is_finite() || inlier_fraction < config.inlier_floor {
        return Err(TrackError::TrackingLost {
            frame: 0,
            reason: format!(
                "inlier fraction {inlier_fraction:.3} below floor {} (energy {energy:.5})",
                config.inlier_floor
            ),
        });
    }
    Ok(TrackResult {
        relative,
        energy,
        inlier_fraction,
        converged,
        mean_flow: stats.flow_sum / stats.valid_points.max(1) as f64,
        affine,
    })
}

fn mean_energy(stats: &LevelStats) -> f64 {
    if stats.residual_count == 0 {
        f64::INFINITY
    } else {
        stats.energy / stats.residual_count as f64
    }
}

/// Build the weighted normal equations at one level and state. Returns `None`
/// when nothing projects.
fn assemble(
    host: &Keyframe,
    current: &ImagePyramid,
    level: usize,
    relative: &SE3Pose,
    affine: (f64, f64),
    camera: &PinholeCamera,
    config: &OdometryConfig,
) -> Option<NormalEquations> {
    let dims = if config.estimate_affine { 8 } else { 6 };
    let mut h = DMatrix::zeros(dims, dims);
    let mut g = DVector::zeros(dims);
    let mut stats = LevelStats {
        energy: 0.0,
        residual_count: 0,
        valid_points: 0,
        inliers: 0,
        flow_sum: 0.0,
    };
    let host_image = host.pyramid.level(level);
    let current_image = current.level(level);
    let inlier_limit = 3.0 * config.huber_delta;
    let oob_energy = huber_energy(super::window::OUT_OF_VIEW_RESIDUAL, config.huber_delta);

    for point in &host.points {
        let Ok(out) = photometric_residual(
            point,
            host_image,
            current_image,
            level,
            relative,
            camera,
            affine,
            config,
        ) else {
            // A point that leaves the view keeps costing a fixed penalty, so
            // pushing residuals off-screen can never reduce the energy.
            stats.energy += oob_energy * PATTERN.len() as f64;
            stats.residual_count += PATTERN.len();
            continue;
        };
        stats.valid_points += 1;
        stats.flow_sum += out.flow;
        let mut center_sq = 0.0;
        for j in 0..out.residuals.len() {
            let r = out.residuals[j];
            let w = out.weights[j];
            let mut jac = DVector::zeros(dims);
            for k in 0..6 {
                jac[k] = out.pose_jacobians[j][k];
            }
            if dims == 8 {
                jac[6] = out.affine_jacobians[j][0];
                jac[7] = out.affine_jacobians[j][1];
            }
            for row in 0..dims {
                for col in 0..dims {
                    h[(row, col)] += w * jac[row] * jac[col];
                }
                g[row] += w * jac[row] * r;
            }
            stats.energy += w * huber_energy(r, config.huber_delta);
            stats.residual_count += 1;
            if j == 0 {
                center_sq = r * r;
            }
        }
        if center_sq.sqrt() < inlier_limit {
            stats.inliers += 1;
        }
    }
    if stats.valid_points == 0 {
        return None;
    }
    Some(NormalEquations { h, g, stats })
}
