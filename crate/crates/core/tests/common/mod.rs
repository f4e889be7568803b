//! Shared finite-difference oracles and random-scene builders for the
//! integration tests.

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use splatvo_core::fit::{compute_loss, FitConfig, TrainingView};
use splatvo_core::gaussian::{render, Gaussian3D, GaussianMap};
use splatvo_core::geometry::{PinholeCamera, SE3Pose};

pub const PARAMS: usize = 13;

/// Random well-conditioned Gaussian in front of the camera.
pub fn random_gaussian(rng: &mut ChaCha8Rng) -> Gaussian3D {
    Gaussian3D {
        position: Vector3::new(
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(1.5..3.5),
        ),
        scale: Vector3::from_fn(|_, _| rng.random_range(0.05..0.3)),
        rotation: UnitQuaternion::from_euler_angles(
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
        ),
        opacity: rng.random_range(0.15..0.9),
        color: [
            rng.random_range(0.1..0.9),
            rng.random_range(0.1..0.9),
            rng.random_range(0.1..0.9),
        ],
    }
}

pub fn random_map(rng: &mut ChaCha8Rng, max_gaussians: usize) -> GaussianMap {
    let n = rng.random_range(1..=max_gaussians);
    GaussianMap {
        gaussians: (0..n).map(|_| random_gaussian(rng)).collect(),
        background: [
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
        ],
    }
}

/// A random fitting problem: a map to differentiate and a structured target
/// image rendered from a different random map.
pub fn random_fit_problem(
    rng: &mut ChaCha8Rng,
    max_gaussians: usize,
    image_size: usize,
) -> (GaussianMap, TrainingView) {
    let focal = image_size as f64 * 1.6;
    let center = (image_size as f64 - 1.0) / 2.0;
    let camera =
        PinholeCamera::new(focal, focal, center, center, image_size, image_size).unwrap();
    let map = random_map(rng, max_gaussians);
    let target_map = random_map(rng, max_gaussians);
    let target = render(
        &target_map,
        &SE3Pose::identity(),
        &camera,
        &splatvo_core::RenderOptions::smooth(),
    )
    .unwrap()
    .color;
    let view = TrainingView::new(target, SE3Pose::identity(), camera).unwrap();
    (map, view)
}

/// The fitting loss evaluated through the real renderer (the function the
/// analytic gradients claim to differentiate).
pub fn loss_at(map: &GaussianMap, view: &TrainingView, config: &FitConfig) -> f64 {
    let rendered = render(
        map,
        &view.world_to_camera,
        &view.camera,
        &config.render_options,
    )
    .unwrap()
    .color;
    compute_loss(&rendered, &view.image, config.lambda_ssim, config.ssim_window)
        .unwrap()
        .total
}

/// Perturb one parameter (flat index 0..13) by `h` in the optimized
/// parameterization: raw position, log scale, left rotation tangent, logit
/// opacity, raw color.
pub fn perturbed(g: &Gaussian3D, param: usize, h: f64) -> Gaussian3D {
    let mut out = g.clone();
    match param {
        0..=2 => out.position[param] += h,
        3..=5 => {
            let k = param - 3;
            out.scale[k] = (out.scale[k].ln() + h).exp();
        }
        6..=8 => {
            let mut axis = Vector3::zeros();
            axis[param - 6] = h;
            out.rotation = UnitQuaternion::from_scaled_axis(axis) * out.rotation;
        }
        9 => {
            let logit = (out.opacity / (1.0 - out.opacity)).ln() + h;
            out.opacity = 1.0 / (1.0 + (-logit).exp());
        }
        10..=12 => out.color[param - 10] += h,
        _ => unreachable!(),
    }
    out
}

/// Central finite difference of the loss for one parameter of one Gaussian.
pub fn fd_gradient(
    map: &GaussianMap,
    view: &TrainingView,
    config: &FitConfig,
    index: usize,
    param: usize,
    h: f64,
) -> f64 {
    let mut plus = map.clone();
    plus.gaussians[index] = perturbed(&map.gaussians[index], param, h);
    let mut minus = map.clone();
    minus.gaussians[index] = perturbed(&map.gaussians[index], param, -h);
    (loss_at(&plus, view, config) - loss_at(&minus, view, config)) / (2.0 * h)
}

pub fn flatten(g: &splatvo_core::fit::GaussianGradient) -> [f64; PARAMS] {
    [
        g.position.x,
        g.position.y,
        g.position.z,
        g.log_scale.x,
        g.log_scale.y,
        g.log_scale.z,
        g.rotation.x,
        g.rotation.y,
        g.rotation.z,
        g.opacity_logit,
        g.color[0],
        g.color[1],
        g.color[2],
    ]
}
