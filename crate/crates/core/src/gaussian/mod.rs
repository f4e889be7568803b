//! The continuous map representation: 3D Gaussian primitives and a software
//! rasterizer producing color, depth and accumulated-opacity images at
//! arbitrary poses.

mod project;
mod render;

pub use project::{
    evaluate_alpha, project_gaussian, project_gaussian_full, sort_splats, ProjectedGaussian,
    Splat2D, ALPHA_MAX, COV_DILATION, MIN_SPLAT_DEPTH,
};
pub use render::{render, render_reference, RenderOptions, RenderedView};

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("cannot render an empty map")]
    EmptyMap,
    #[error("gaussian {index} violates an attribute invariant: {reason}")]
    InvalidGaussian { index: usize, reason: String },
}

/// One map primitive: an anisotropic 3D Gaussian with opacity and color.
///
/// `scale` holds per-axis standard deviations in meters; `rotation` orients
/// the ellipsoid; the world covariance is `R diag(scale²) Rᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian3D {
    pub position: Vector3<f64>,
    pub scale: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub opacity: f64,
    pub color: [f64; 3],
}

impl Gaussian3D {
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix().into_inner();
        let d = Matrix3::from_diagonal(&self.scale.map(|s| s * s));
        r * d * r.transpose()
    }

    pub fn validate(&self, index: usize) -> Result<(), MapError> {
        let fail = |reason: &str| MapError::InvalidGaussian {
            index,
            reason: reason.to_string(),
        };
        for s in self.scale.iter() {
            if !(1e-6..=1e3).contains(s) {
                return Err(fail("scale outside [1e-6, 1e3] m"));
            }
        }
        if !(self.opacity > 0.0 && self.opacity < 1.0) {
            return Err(fail("opacity outside (0, 1)"));
        }
        if (self.rotation.norm() - 1.0).abs() > 1e-9 {
            return Err(fail("quaternion not unit-norm"));
        }
        if !self.position.iter().all(|v| v.is_finite()) {
            return Err(fail("non-finite position"));
        }
        if !self.color.iter().all(|c| c.is_finite() && (0.0..=1.0).contains(c)) {
            return Err(fail("color outside [0, 1]"));
        }
        Ok(())
    }
}

/// Ordered collection of Gaussians plus the background color blended in with
/// the leftover transmittance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMap {
    pub gaussians: Vec<Gaussian3D>,
    pub background: [f64; 3],
}

impl GaussianMap {
    pub fn new(gaussians: Vec<Gaussian3D>) -> Self {
        Self {
            gaussians,
            background: [0.0; 3],
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn validate(&self) -> Result<(), MapError> {
        for (i, g) in self.gaussians.iter().enumerate() {
            g.validate(i)?;
        }
        Ok(())
    }
}
