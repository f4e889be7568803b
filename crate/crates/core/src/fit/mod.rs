//! Offline construction of the Gaussian map: initialization from a point
//! cloud and iterative optimization of all Gaussian attributes against posed
//! ground-truth images.

mod adam;
mod grad;
mod init;
mod loss;
mod ssim;

pub use grad::{loss_gradient, GaussianGradient, MapGradients};
pub use init::{init_from_pointcloud, INITIAL_OPACITY};
pub use loss::{compute_loss, LossBreakdown};
pub use ssim::{ssim_gray, ssim_rgb};

use nalgebra::UnitQuaternion;
use thiserror::Error;

use crate::gaussian::{GaussianMap, MapError, RenderOptions};
use crate::geometry::{PinholeCamera, RgbImage, SE3Pose};

use adam::{AdamState, PARAMS_PER_GAUSSIAN};

#[derive(Debug, Error)]
pub enum FitError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("image dimensions differ: {a:?} vs {b:?}")]
    DimensionMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("ssim window {window} invalid for {width}x{height} (must be odd and fit)")]
    BadSsimWindow {
        window: usize,
        width: usize,
        height: usize,
    },
    #[error("map renders with zero coverage of the view")]
    ZeroCoverage,
    #[error("loss became non-finite at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("no training views")]
    NoViews,
    #[error("training view image is {got:?} but camera expects {expected:?}")]
    ViewSizeMismatch {
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error(transparent)]
    Map(#[from] MapError),
}

/// A posed ground-truth image the map is trained against.
#[derive(Debug, Clone)]
pub struct TrainingView {
    pub image: RgbImage,
    pub world_to_camera: SE3Pose,
    pub camera: PinholeCamera,
}

impl TrainingView {
    pub fn new(
        image: RgbImage,
        world_to_camera: SE3Pose,
        camera: PinholeCamera,
    ) -> Result<Self, FitError> {
        if image.width() != camera.width || image.height() != camera.height {
            return Err(FitError::ViewSizeMismatch {
                got: (image.width(), image.height()),
                expected: (camera.width, camera.height),
            });
        }
        Ok(Self {
            image,
            world_to_camera,
            camera,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub iterations: usize,
    pub lr_position: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lr_opacity: f64,
    pub lr_color: f64,
    /// Mixing weight of the structural term in the loss.
    pub lambda_ssim: f64,
    pub ssim_window: usize,
    pub rng_seed: u64,
    /// Forward-model options used during optimization. The smooth default
    /// keeps the loss differentiable everywhere.
    pub render_options: RenderOptions,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            lr_position: 2e-3,
            lr_scale: 5e-3,
            lr_rotation: 2e-3,
            lr_opacity: 2.5e-2,
            lr_color: 2.5e-2,
            lambda_ssim: 0.2,
            ssim_window: 11,
            rng_seed: 0,
            render_options: RenderOptions::smooth(),
        }
    }
}

/// Loss record of one optimization step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationLoss {
    pub iteration: usize,
    pub view_index: usize,
    pub l_color: f64,
    pub l_ssim: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub map: GaussianMap,
    pub history: Vec<IterationLoss>,
}

const LOGIT_LIMIT: f64 = 12.0;
const LOG_SCALE_MIN: f64 = -13.0; // keeps scale within [1e-6, 1e3] m
const LOG_SCALE_MAX: f64 = 6.9;

/// Optimize all Gaussian attributes against the views, one view per iteration
/// in round-robin order, with per-group adaptive steps. Constraints are kept
/// by construction: opacity steps in logit space, scale in log space, rotation
/// on the quaternion manifold.
pub fn fit(
    map: GaussianMap,
    views: &[TrainingView],
    config: &FitConfig,
) -> Result<FitOutcome, FitError> {
    if views.is_empty() {
        return Err(FitError::NoViews);
    }
    map.validate()?;
    let mut map = map;
    let mut state = AdamState::new(map.len());
    let mut history = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let view_index = iteration % views.len();
        let (grads, loss) = loss_gradient(&map, &views[view_index], config)?;
        if !loss.total.is_finite() {
            return Err(FitError::Diverged { iteration });
        }
        history.push(IterationLoss {
            iteration,
            view_index,
            l_color: loss.l_color,
            l_ssim: loss.l_ssim,
            total: loss.total,
        });
        let directions = state.directions(&grads);
        apply_step(&mut map, &directions, config);
    }
    Ok(FitOutcome { map, history })
}

fn apply_step(map: &mut GaussianMap, directions: &[f64], config: &FitConfig) {
    // Zero steps must leave attributes bit-identical (no parameterization
    // roundtrips), so an exactly converged map stays an exact fixed point.
    for (i, g) in map.gaussians.iter_mut().enumerate() {
        let d = &directions[i * PARAMS_PER_GAUSSIAN..(i + 1) * PARAMS_PER_GAUSSIAN];
        for k in 0..3 {
            let step = config.lr_position * d[k];
            if step != 0.0 {
                g.position[k] -= step;
            }
        }
        for k in 0..3 {
            let step = config.lr_scale * d[3 + k];
            if step != 0.0 {
                g.scale[k] = (g.scale[k].ln() - step)
                    .clamp(LOG_SCALE_MIN, LOG_SCALE_MAX)
                    .exp();
            }
        }
        let delta = nalgebra::Vector3::new(
            -config.lr_rotation * d[6],
            -config.lr_rotation * d[7],
            -config.lr_rotation * d[8],
        );
        if delta != nalgebra::Vector3::zeros() {
            g.rotation = UnitQuaternion::new_normalize(
                (UnitQuaternion::from_scaled_axis(delta) * g.rotation).into_inner(),
            );
        }
        let opacity_step = config.lr_opacity * d[9];
        if opacity_step != 0.0 {
            let logit = ((g.opacity / (1.0 - g.opacity)).ln() - opacity_step)
                .clamp(-LOGIT_LIMIT, LOGIT_LIMIT);
            g.opacity = 1.0 / (1.0 + (-logit).exp());
        }
        for k in 0..3 {
            let step = config.lr_color * d[10 + k];
            if step != 0.0 {
                g.color[k] = (g.color[k] - step).clamp(0.0, 1.0);
            }
        }
    }
}

/// Peak signal-to-noise ratio in dB over RGB on the [0,1] range.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> f64 {
    let mut mse = 0.0;
    for (pa, pb) in a.pixels().iter().zip(b.pixels()) {
        for ch in 0..3 {
            let d = pa[ch] - pb[ch];
            mse += d * d;
        }
    }
    mse /= (a.pixels().len() * 3) as f64;
    if mse == 0.0 {
        return f64::INFINITY;
    }
    -10.0 * mse.log10()
}
