use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::geometry::{PinholeCamera, SE3Pose};

use super::Gaussian3D;

/// Isotropic dilation added to every projected 2D covariance (pixels²). Keeps
/// sub-pixel footprints invertible.
pub const COV_DILATION: f64 = 0.3;

/// Upper clamp on any single splat's per-pixel opacity, so one splat can never
/// zero the transmittance behind it.
pub const ALPHA_MAX: f64 = 0.999;

/// Camera-frame depth below which a Gaussian is culled.
pub const MIN_SPLAT_DEPTH: f64 = 0.01;

/// 2D footprint of a projected Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    /// Projected mean (pixels).
    pub mean: Vector2<f64>,
    /// 2D covariance including dilation (pixels²).
    pub cov: Matrix2<f64>,
    /// Camera-frame z of the Gaussian center (meters).
    pub depth: f64,
    /// Base opacity factor in (0, 1).
    pub opacity: f64,
    pub color: [f64; 3],
}

/// A splat plus the camera-frame intermediates the fitting backward pass needs.
#[derive(Debug, Clone)]
pub struct ProjectedGaussian {
    pub splat: Splat2D,
    pub cam_point: Vector3<f64>,
    /// Camera-frame 3D covariance `W Σ Wᵀ` (before projection).
    pub cam_cov: Matrix3<f64>,
    /// Projection Jacobian at the mean.
    pub jacobian: Matrix2x3<f64>,
}

/// Jacobian of the pinhole projection at a camera-frame point.
pub fn projection_jacobian(camera: &PinholeCamera, p: &Vector3<f64>) -> Matrix2x3<f64> {
    let z_inv = 1.0 / p.z;
    let z_inv2 = z_inv * z_inv;
    Matrix2x3::new(
        camera.fx * z_inv,
        0.0,
        -camera.fx * p.x * z_inv2,
        0.0,
        camera.fy * z_inv,
        -camera.fy * p.y * z_inv2,
    )
}

/// EWA projection of a 3D Gaussian to its 2D image footprint.
///
/// Returns `None` when the Gaussian sits at `z <= MIN_SPLAT_DEPTH`, or (with
/// `cull_offscreen`) when its 3σ ellipse misses the image rectangle.
pub fn project_gaussian_full(
    g: &Gaussian3D,
    world_to_camera: &SE3Pose,
    camera: &PinholeCamera,
    cull_offscreen: bool,
) -> Option<ProjectedGaussian> {
    let cam_point = world_to_camera.transform(&g.position);
    if cam_point.z <= MIN_SPLAT_DEPTH {
        return None;
    }
    let mean = Vector2::new(
        camera.fx * cam_point.x / cam_point.z + camera.cx,
        camera.fy * cam_point.y / cam_point.z + camera.cy,
    );
    let w = world_to_camera.rotation();
    let cam_cov = w * g.covariance() * w.transpose();
    let jacobian = projection_jacobian(camera, &cam_point);
    let cov = jacobian * cam_cov * jacobian.transpose()
        + Matrix2::from_diagonal_element(COV_DILATION);

    if cull_offscreen {
        let rx = 3.0 * cov[(0, 0)].max(0.0).sqrt();
        let ry = 3.0 * cov[(1, 1)].max(0.0).sqrt();
        if mean.x + rx < 0.0
            || mean.y + ry < 0.0
            || mean.x - rx > (camera.width - 1) as f64
            || mean.y - ry > (camera.height - 1) as f64
        {
            return None;
        }
    }

    Some(ProjectedGaussian {
        splat: Splat2D {
            mean,
            cov,
            depth: cam_point.z,
            opacity: g.opacity,
            color: g.color,
        },
        cam_point,
        cam_cov,
        jacobian,
    })
}

/// EWA projection with visibility culling; `None` means culled.
pub fn project_gaussian(
    g: &Gaussian3D,
    world_to_camera: &SE3Pose,
    camera: &PinholeCamera,
) -> Option<Splat2D> {
    project_gaussian_full(g, world_to_camera, camera, true).map(|p| p.splat)
}

impl Splat2D {
    /// Per-pixel opacity `opacity · exp(-½ dᵀ cov⁻¹ d)`, clamped to
    /// [`ALPHA_MAX`]. Contributions beyond `cutoff` Mahalanobis distances are
    /// zero; pass `None` for an uncut evaluation.
    pub fn alpha_at(&self, pixel: &Vector2<f64>, cutoff: Option<f64>) -> f64 {
        let d = pixel - self.mean;
        let det = self.cov[(0, 0)] * self.cov[(1, 1)] - self.cov[(0, 1)] * self.cov[(1, 0)];
        let maha_sq = (self.cov[(1, 1)] * d.x * d.x - 2.0 * self.cov[(0, 1)] * d.x * d.y
            + self.cov[(0, 0)] * d.y * d.y)
            / det;
        if let Some(c) = cutoff {
            if maha_sq > c * c {
                return 0.0;
            }
        }
        (self.opacity * (-0.5 * maha_sq).exp()).min(ALPHA_MAX)
    }
}

/// Per-pixel opacity with the default 3σ contribution cutoff.
pub fn evaluate_alpha(s: &Splat2D, pixel: &Vector2<f64>) -> f64 {
    s.alpha_at(pixel, Some(3.0))
}

/// Sort splats front to back by camera depth, stable for equal depths.
pub fn sort_splats(mut splats: Vec<Splat2D>) -> Vec<Splat2D> {
    splats.sort_by(|a, b| a.depth.partial_cmp(&b.depth).expect("finite splat depths"));
    splats
}
