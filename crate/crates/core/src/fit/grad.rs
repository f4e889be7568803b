use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::gaussian::{project_gaussian_full, GaussianMap, ProjectedGaussian, ALPHA_MAX};
use crate::geometry::skew;

use super::loss::{loss_with_image_gradient, LossBreakdown};
use super::{FitConfig, FitError, TrainingView};

/// Gradients of the loss in the optimized parameterizations: raw position,
/// log scale, left rotation tangent, logit opacity, raw color.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GaussianGradient {
    pub position: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    pub rotation: Vector3<f64>,
    pub opacity_logit: f64,
    pub color: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct MapGradients {
    pub per_gaussian: Vec<GaussianGradient>,
}

/// One splat's contribution to one pixel, recorded during the forward pass.
#[derive(Clone, Copy)]
struct Contribution {
    /// Index into the depth-sorted projection list.
    splat: u32,
    alpha: f64,
    /// Transmittance in front of this splat.
    trans_before: f64,
}

/// Per-splat screen-space adjoints accumulated over pixels.
#[derive(Clone, Copy)]
struct SplatAdjoint {
    mean: Vector2<f64>,
    cov: Matrix2<f64>,
    opacity: f64,
    color: [f64; 3],
}

impl Default for SplatAdjoint {
    fn default() -> Self {
        Self {
            mean: Vector2::zeros(),
            cov: Matrix2::zeros(),
            opacity: 0.0,
            color: [0.0; 3],
        }
    }
}

/// Analytic gradients of the fitting loss with respect to every Gaussian's
/// attributes. Culled Gaussians get zero gradients. The forward model follows
/// `config.render_options`; with the default smooth options the loss is
/// differentiable everywhere and matches central finite differences.
pub fn loss_gradient(
    map: &GaussianMap,
    view: &TrainingView,
    config: &FitConfig,
) -> Result<(MapGradients, LossBreakdown), FitError> {
    let camera = &view.camera;
    let width = camera.width;
    let height = camera.height;
    let options = config.render_options;
    let cull = options.spatial_cutoff.is_some();

    // Forward projection, depth-sorted with stable ties like the renderer.
    let mut projections: Vec<(usize, ProjectedGaussian)> = map
        .gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| {
            project_gaussian_full(g, &view.world_to_camera, camera, cull).map(|p| (i, p))
        })
        .collect();
    projections.sort_by(|a, b| {
        a.1.splat
            .depth
            .partial_cmp(&b.1.splat.depth)
            .expect("finite splat depths")
    });
    if projections.is_empty() {
        return Err(FitError::ZeroCoverage);
    }
    let inv_covs: Vec<Matrix2<f64>> = projections
        .iter()
        .map(|(_, p)| p.splat.cov.try_inverse().expect("dilated covariance"))
        .collect();

    // Per-tile splat lists (in depth order). With a spatial cutoff only the
    // splats whose cutoff ellipse touches a tile are walked for its pixels;
    // anything skipped would have evaluated to zero alpha anyway.
    const TILE: usize = 16;
    let tiles_x = width.div_ceil(TILE);
    let tiles_y = height.div_ceil(TILE);
    let mut tile_lists: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    match options.spatial_cutoff {
        Some(cutoff) => {
            for (s, (_, proj)) in projections.iter().enumerate() {
                let splat = &proj.splat;
                let rx = cutoff * splat.cov[(0, 0)].max(0.0).sqrt();
                let ry = cutoff * splat.cov[(1, 1)].max(0.0).sqrt();
                if splat.mean.x + rx < 0.0 || splat.mean.y + ry < 0.0 {
                    continue;
                }
                let x0 = ((splat.mean.x - rx).floor().max(0.0) as usize).min(width - 1);
                let x1 = ((splat.mean.x + rx).ceil().max(0.0) as usize).min(width - 1);
                let y0 = ((splat.mean.y - ry).floor().max(0.0) as usize).min(height - 1);
                let y1 = ((splat.mean.y + ry).ceil().max(0.0) as usize).min(height - 1);
                for ty in y0 / TILE..=y1 / TILE {
                    for tx in x0 / TILE..=x1 / TILE {
                        tile_lists[ty * tiles_x + tx].push(s as u32);
                    }
                }
            }
        }
        None => {
            let all: Vec<u32> = (0..projections.len() as u32).collect();
            for list in &mut tile_lists {
                *list = all.clone();
            }
        }
    }

    // Forward compositing, recording every non-zero contribution.
    struct RowForward {
        colors: Vec<[f64; 3]>,
        records: Vec<Vec<Contribution>>,
    }
    let rows: Vec<RowForward> = (0..height)
        .into_par_iter()
        .map(|y| {
            let mut colors = Vec::with_capacity(width);
            let mut records = Vec::with_capacity(width);
            for x in 0..width {
                let pixel = Vector2::new(x as f64, y as f64);
                let mut transmittance = 1.0f64;
                let mut color = [0.0f64; 3];
                let mut contribs = Vec::new();
                for &s in &tile_lists[(y / TILE) * tiles_x + x / TILE] {
                    let s = s as usize;
                    let proj = &projections[s].1;
                    let a = proj.splat.alpha_at(&pixel, options.spatial_cutoff);
                    if a <= 0.0 {
                        continue;
                    }
                    contribs.push(Contribution {
                        splat: s as u32,
                        alpha: a,
                        trans_before: transmittance,
                    });
                    let weight = transmittance * a;
                    for ch in 0..3 {
                        color[ch] += weight * proj.splat.color[ch];
                    }
                    transmittance *= 1.0 - a;
                    if options.early_stop_transmittance > 0.0
                        && transmittance < options.early_stop_transmittance
                    {
                        break;
                    }
                }
                for ch in 0..3 {
                    color[ch] += transmittance * map.background[ch];
                }
                colors.push(color);
                records.push(contribs);
            }
            RowForward { colors, records }
        })
        .collect();

    if rows.iter().all(|r| r.records.iter().all(|c| c.is_empty())) {
        return Err(FitError::ZeroCoverage);
    }

    let rendered = crate::geometry::RgbImage::from_fn(width, height, |x, y| rows[y].colors[x]);
    let (breakdown, pixel_grad) =
        loss_with_image_gradient(&rendered, &view.image, config.lambda_ssim, config.ssim_window)?;

    // Backward over pixels: per-row-band partial adjoints reduced in a fixed
    // order so results do not depend on the worker count.
    let band_size = 16usize;
    let bands: Vec<Vec<SplatAdjoint>> = (0..height.div_ceil(band_size))
        .into_par_iter()
        .map(|band| {
            let mut adj = vec![SplatAdjoint::default(); projections.len()];
            let y0 = band * band_size;
            let y1 = (y0 + band_size).min(height);
            for y in y0..y1 {
                for x in 0..width {
                    let contribs = &rows[y].records[x];
                    if contribs.is_empty() {
                        continue;
                    }
                    let d_color_pixel = pixel_grad[y * width + x];
                    let pixel = Vector2::new(x as f64, y as f64);
                    let last = contribs.last().unwrap();
                    let trans_end = last.trans_before * (1.0 - last.alpha);
                    // Suffix sum of everything composited behind the current
                    // splat, starting with the background term.
                    let mut suffix = [
                        trans_end * map.background[0],
                        trans_end * map.background[1],
                        trans_end * map.background[2],
                    ];
                    for contrib in contribs.iter().rev() {
                        let s = contrib.splat as usize;
                        let proj = &projections[s].1;
                        let weight = contrib.alpha * contrib.trans_before;
                        let a = &mut adj[s];
                        let mut d_alpha = 0.0;
                        for ch in 0..3 {
                            a.color[ch] += d_color_pixel[ch] * weight;
                            d_alpha += d_color_pixel[ch]
                                * (proj.splat.color[ch] * contrib.trans_before
                                    - suffix[ch] / (1.0 - contrib.alpha));
                        }
                        if contrib.alpha < ALPHA_MAX {
                            // alpha = opacity · G with G = exp(-½ dᵀ C⁻¹ d).
                            let g_value = contrib.alpha / proj.splat.opacity;
                            a.opacity += d_alpha * g_value;
                            let d_g = d_alpha * proj.splat.opacity;
                            let offset = pixel - proj.splat.mean;
                            let cd = inv_covs[s] * offset;
                            a.mean += cd * (d_g * g_value);
                            a.cov += (cd * cd.transpose()) * (0.5 * d_g * g_value);
                        }
                        for ch in 0..3 {
                            suffix[ch] += weight * proj.splat.color[ch];
                        }
                    }
                }
            }
            adj
        })
        .collect();

    let mut adjoints = vec![SplatAdjoint::default(); projections.len()];
    for band in bands {
        for (total, part) in adjoints.iter_mut().zip(band) {
            total.mean += part.mean;
            total.cov += part.cov;
            total.opacity += part.opacity;
            for ch in 0..3 {
                total.color[ch] += part.color[ch];
            }
        }
    }

    // Geometric chain from screen space back to each Gaussian's parameters.
    let w_rot = view.world_to_camera.rotation();
    let mut per_gaussian = vec![GaussianGradient::default(); map.len()];
    let resolved: Vec<(usize, GaussianGradient)> = projections
        .par_iter()
        .zip(adjoints.par_iter())
        .map(|((gaussian_index, proj), adj)| {
            (
                *gaussian_index,
                backpropagate_geometry(&map.gaussians[*gaussian_index], proj, adj, w_rot, camera),
            )
        })
        .collect();
    for (index, grad) in resolved {
        per_gaussian[index] = grad;
    }

    Ok((MapGradients { per_gaussian }, breakdown))
}

fn backpropagate_geometry(
    gaussian: &crate::gaussian::Gaussian3D,
    proj: &ProjectedGaussian,
    adj: &SplatAdjoint,
    w_rot: &Matrix3<f64>,
    camera: &crate::geometry::PinholeCamera,
) -> GaussianGradient {
    let d_cov = (adj.cov + adj.cov.transpose()) * 0.5;
    let j = proj.jacobian;

    // Mean path through the projection.
    let mut d_cam: Vector3<f64> = j.transpose() * adj.mean;

    // Covariance path: C = J Σc Jᵀ + dilation.
    let d_sigma_cam: Matrix3<f64> = j.transpose() * d_cov * j;

    // The Jacobian itself depends on the camera-frame point.
    let p = proj.cam_point;
    let z_inv2 = 1.0 / (p.z * p.z);
    let z_inv3 = z_inv2 / p.z;
    let dj_dp: [Matrix2x3<f64>; 3] = [
        Matrix2x3::new(0.0, 0.0, -camera.fx * z_inv2, 0.0, 0.0, 0.0),
        Matrix2x3::new(0.0, 0.0, 0.0, 0.0, 0.0, -camera.fy * z_inv2),
        Matrix2x3::new(
            -camera.fx * z_inv2,
            0.0,
            2.0 * camera.fx * p.x * z_inv3,
            0.0,
            -camera.fy * z_inv2,
            2.0 * camera.fy * p.y * z_inv3,
        ),
    ];
    for (k, dj) in dj_dp.iter().enumerate() {
        let m = dj * proj.cam_cov * j.transpose();
        d_cam[k] += 2.0 * (d_cov.component_mul(&m)).sum();
    }

    let position = w_rot.transpose() * d_cam;

    // World covariance Σw = R diag(s²) Rᵀ, camera covariance W Σw Wᵀ.
    let d_sigma_world = w_rot.transpose() * d_sigma_cam * w_rot;
    let r = gaussian.rotation.to_rotation_matrix().into_inner();
    let in_local = r.transpose() * d_sigma_world * r;
    let log_scale = Vector3::from_fn(|k, _| {
        2.0 * gaussian.scale[k] * gaussian.scale[k] * in_local[(k, k)]
    });

    let sigma_world = gaussian.covariance();
    let rotation = Vector3::from_fn(|axis, _| {
        let e = skew(&Vector3::from_fn(|i, _| if i == axis { 1.0 } else { 0.0 }));
        let d_sigma = e * sigma_world - sigma_world * e;
        d_sigma_world.component_mul(&d_sigma).sum()
    });

    let opacity_logit = adj.opacity * gaussian.opacity * (1.0 - gaussian.opacity);

    GaussianGradient {
        position,
        log_scale,
        rotation,
        opacity_logit,
        color: adj.color,
    }
}
