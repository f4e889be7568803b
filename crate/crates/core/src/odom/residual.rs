use nalgebra::{Matrix3, Vector2, Vector3, Vector6};

use crate::gaussian::MIN_SPLAT_DEPTH;
use crate::geometry::{skew, GrayImage, PinholeCamera, SE3Pose};

use super::points::{TrackPoint, PATTERN};
use super::{OdometryConfig, TrackError};

/// Residuals, weights and pose jacobians of one track point at one pyramid
/// level. Jacobians are with respect to a left-multiplied twist update of
/// the host-to-current transform, plus the affine brightness pair `(a, b)`.
#[derive(Debug, Clone)]
pub struct PointResidual {
    pub residuals: [f64; PATTERN.len()],
    pub weights: [f64; PATTERN.len()],
    pub pose_jacobians: [Vector6<f64>; PATTERN.len()],
    pub affine_jacobians: [[f64; 2]; PATTERN.len()],
    /// Pixel displacement of the pattern center, in full-resolution pixels.
    pub flow: f64,
}

/// Photometric residual of one point: `r_j = I_c[u'_j] - (e^a I_k[u_j] + b)`
/// over the residual pattern, with the reprojection `u'` through the stored
/// inverse depth. Weights combine the Huber weight at `huber_delta` with
/// gradient-based normalization.
pub fn photometric_residual(
    point: &TrackPoint,
    host_image: &GrayImage,
    current_image: &GrayImage,
    level: usize,
    relative: &SE3Pose,
    camera: &PinholeCamera,
    affine: (f64, f64),
    config: &OdometryConfig,
) -> Result<PointResidual, TrackError> {
    let cam_level = camera.at_level(level);
    let scale = (1u64 << level) as f64;
    let host_pixel = Vector2::new(
        (point.pixel.x + 0.5) / scale - 0.5,
        (point.pixel.y + 0.5) / scale - 0.5,
    );

    let mut residuals = [0.0; PATTERN.len()];
    let mut weights = [0.0; PATTERN.len()];
    let mut pose_jacobians = [Vector6::zeros(); PATTERN.len()];
    let mut affine_jacobians = [[0.0; 2]; PATTERN.len()];
    let mut flow = 0.0;
    let exp_a = affine.0.exp();
    let grad_c2 = config.gradient_weight_constant * config.gradient_weight_constant;
    let max_x = (cam_level.width - 1) as f64;
    let max_y = (cam_level.height - 1) as f64;

    for (j, (dx, dy)) in PATTERN.iter().enumerate() {
        let host_uv = Vector2::new(host_pixel.x + *dx as f64, host_pixel.y + *dy as f64);
        if host_uv.x < 0.0 || host_uv.y < 0.0 || host_uv.x > max_x || host_uv.y > max_y {
            return Err(TrackError::OutOfView);
        }
        // Host intensity: cached at level 0, sampled from the pyramid above.
        let host_intensity = if level == 0 {
            point.pattern_intensities[j]
        } else {
            host_image.bilinear_sample(&host_uv)?
        };
        let host_point = cam_level.backproject(&host_uv, point.inv_depth)?;
        let current_point = relative.transform(&host_point);
        if current_point.z <= MIN_SPLAT_DEPTH {
            return Err(TrackError::OutOfView);
        }
        let current_uv = cam_level.project(&current_point)?;
        if current_uv.x < 1.0
            || current_uv.y < 1.0
            || current_uv.x > max_x - 1.0
            || current_uv.y > max_y - 1.0
        {
            return Err(TrackError::OutOfView);
        }
        let (current_intensity, image_grad) =
            current_image.sample_with_gradient(&current_uv)?;
        let residual = current_intensity - (exp_a * host_intensity + affine.1);
        let z_inv = 1.0 / current_point.z;
        // d u' / d(camera point), then chained with the left-twist action
        // d(exp(ξ)q)/dξ = [I | -[q]x].
        let proj_row_x = Vector3::new(
            cam_level.fx * z_inv,
            0.0,
            -cam_level.fx * current_point.x * z_inv * z_inv,
        );
        let proj_row_y = Vector3::new(
            0.0,
            cam_level.fy * z_inv,
            -cam_level.fy * current_point.y * z_inv * z_inv,
        );
        let d_intensity_d_point = image_grad.x * proj_row_x + image_grad.y * proj_row_y;
        let minus_q_skew: Matrix3<f64> = -skew(&current_point);
        let mut jacobian = Vector6::zeros();
        for k in 0..3 {
            jacobian[k] = d_intensity_d_point[k];
        }
        let rotational = minus_q_skew.transpose() * d_intensity_d_point;
        for k in 0..3 {
            jacobian[3 + k] = rotational[k];
        }

        let host_grad = host_image.gradient(&host_uv)?;
        let grad_weight = grad_c2 / (grad_c2 + host_grad.norm_squared());
        let huber_weight = if residual.abs() <= config.huber_delta {
            1.0
        } else {
            config.huber_delta / residual.abs()
        };

        residuals[j] = residual;
        weights[j] = grad_weight * huber_weight;
        pose_jacobians[j] = jacobian;
        affine_jacobians[j] = [-exp_a * host_intensity, -1.0];
        if j == 0 {
            flow = (current_uv - host_uv).norm() * scale;
        }
    }

    Ok(PointResidual {
        residuals,
        weights,
        pose_jacobians,
        affine_jacobians,
        flow,
    })
}

/// Huber energy of one residual (quadratic core, linear tail).
pub fn huber_energy(residual: f64, delta: f64) -> f64 {
    let a = residual.abs();
    if a <= delta {
        residual * residual
    } else {
        delta * (2.0 * a - delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_pyramid;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured(width: usize, height: usize) -> GrayImage {
        GrayImage::from_fn(width, height, |x, y| {
            0.5 + 0.3 * ((x as f64 * 0.35).sin() * (y as f64 * 0.22).cos())
                + 0.15 * ((x as f64 * 0.07 + y as f64 * 0.11).sin())
        })
    }

    fn camera() -> PinholeCamera {
        PinholeCamera::new(80.0, 80.0, 31.5, 31.5, 64, 64).unwrap()
    }

    fn point_at(x: usize, y: usize, inv_depth: f64, image: &GrayImage) -> TrackPoint {
        let mut pattern = [0.0; PATTERN.len()];
        for (k, (dx, dy)) in PATTERN.iter().enumerate() {
            pattern[k] = image.get((x as i32 + dx) as usize, (y as i32 + dy) as usize);
        }
        TrackPoint {
            pixel: Vector2::new(x as f64, y as f64),
            inv_depth,
            host_frame_id: 0,
            pattern_intensities: pattern,
        }
    }

    #[test]
    fn identity_self_tracking_has_zero_residual() {
        let image = textured(64, 64);
        let config = OdometryConfig::default();
        let point = point_at(30, 25, 0.5, &image);
        let out = photometric_residual(
            &point,
            &image,
            &image,
            0,
            &SE3Pose::identity(),
            &camera(),
            (0.0, 0.0),
            &config,
        )
        .unwrap();
        for r in out.residuals {
            assert!(r.abs() < 1e-12);
        }
        assert!(out.flow < 1e-12);
    }

    #[test]
    fn reprojection_behind_camera_is_out_of_view() {
        let image = textured(64, 64);
        let config = OdometryConfig::default();
        let point = point_at(30, 25, 0.5, &image);
        // Move the camera 3 m forward along +z: the 2 m point falls behind.
        let relative = SE3Pose::exp(&Vector6::new(0.0, 0.0, -3.0, 0.0, 0.0, 0.0));
        assert!(matches!(
            photometric_residual(
                &point, &image, &image, 0, &relative, &camera(), (0.0, 0.0), &config
            ),
            Err(TrackError::OutOfView)
        ));
    }

    #[test]
    fn pose_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let host = textured(64, 64);
        let current = GrayImage::from_fn(64, 64, |x, y| {
            0.5 + 0.3 * ((x as f64 * 0.31 + 0.8).sin() * (y as f64 * 0.27).cos())
                + 0.1 * ((x as f64 * 0.05 + y as f64 * 0.13).cos())
        });
        let pyr_host = build_pyramid(&host, 2).unwrap();
        let config = OdometryConfig::default();
        let cam = camera();
        let mut checked = 0;
        while checked < 40 {
            let x = rng.random_range(8..56);
            let y = rng.random_range(8..56);
            let inv_depth = rng.random_range(0.3..1.2);
            let point = point_at(x, y, inv_depth, &host);
            let twist = Vector6::from_fn(|_, _| rng.random_range(-0.02..0.02));
            let relative = SE3Pose::exp(&twist);
            let level = rng.random_range(0..2usize);
            let host_img = pyr_host.level(level);
            let current_img = if level == 0 {
                current.clone()
            } else {
                build_pyramid(&current, 2).unwrap().level(1).clone()
            };
            let Ok(base) = photometric_residual(
                &point, host_img, &current_img, level, &relative, &cam, (0.0, 0.0), &config,
            ) else {
                continue;
            };
            let h = 1e-6;
            for k in 0..6 {
                let mut delta = Vector6::zeros();
                delta[k] = h;
                let plus = SE3Pose::exp(&delta).compose(&relative);
                let minus = SE3Pose::exp(&(-delta)).compose(&relative);
                let (Ok(rp), Ok(rm)) = (
                    photometric_residual(
                        &point, host_img, &current_img, level, &plus, &cam, (0.0, 0.0),
                        &config,
                    ),
                    photometric_residual(
                        &point, host_img, &current_img, level, &minus, &cam, (0.0, 0.0),
                        &config,
                    ),
                ) else {
                    continue;
                };
                for j in 0..PATTERN.len() {
                    let fd = (rp.residuals[j] - rm.residuals[j]) / (2.0 * h);
                    let analytic = base.pose_jacobians[j][k];
                    let tolerance = (1e-4 * analytic.abs().max(fd.abs())).max(1e-6);
                    assert!(
                        (fd - analytic).abs() <= tolerance,
                        "jacobian mismatch at point ({x},{y}) level {level} k={k}: {analytic} vs {fd}"
                    );
                }
            }
            checked += 1;
        }
    }

    #[test]
    fn affine_jacobian_matches_finite_differences() {
        let host = textured(64, 64);
        let current = textured(64, 64);
        let config = OdometryConfig::default();
        let cam = camera();
        let point = point_at(20, 33, 0.6, &host);
        let relative = SE3Pose::exp(&Vector6::new(0.01, -0.02, 0.005, 0.002, -0.004, 0.003));
        let affine = (0.1, -0.05);
        let base = photometric_residual(
            &point, &host, &current, 0, &relative, &cam, affine, &config,
        )
        .unwrap();
        let h = 1e-6;
        for (k, sign) in [(0usize, (h, 0.0)), (1usize, (0.0, h))] {
            let plus = photometric_residual(
                &point,
                &host,
                &current,
                0,
                &relative,
                &cam,
                (affine.0 + sign.0, affine.1 + sign.1),
                &config,
            )
            .unwrap();
            let minus = photometric_residual(
                &point,
                &host,
                &current,
                0,
                &relative,
                &cam,
                (affine.0 - sign.0, affine.1 - sign.1),
                &config,
            )
            .unwrap();
            for j in 0..PATTERN.len() {
                let fd = (plus.residuals[j] - minus.residuals[j]) / (2.0 * h);
                assert_relative_eq!(
                    base.affine_jacobians[j][k],
                    fd,
                    epsilon = 1e-6,
                    max_relative = 1e-5
                );
            }
        }
    }
}
