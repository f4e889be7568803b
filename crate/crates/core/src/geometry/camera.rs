use nalgebra::{Vector2, Vector3};

use super::GeometryError;

/// Depth below which projection is treated as behind the camera rather than
/// allowed to blow up numerically.
pub const MIN_PROJECTION_DEPTH: f64 = 1e-6;

/// Pinhole intrinsics. Integer pixel coordinates address pixel centers, so the
/// valid image domain is `[0, width-1] x [0, height-1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl PinholeCamera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let fail = |reason: &str| GeometryError::InvalidCamera {
            reason: reason.to_string(),
        };
        if !(fx > 0.0 && fy > 0.0) || !fx.is_finite() || !fy.is_finite() {
            return Err(fail("focal lengths must be positive and finite"));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(fail("principal point must lie inside the image"));
        }
        if width == 0 || height == 0 {
            return Err(fail("image dimensions must be non-zero"));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Project a camera-frame point to pixel coordinates.
    pub fn project(&self, point: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
        if point.z <= MIN_PROJECTION_DEPTH {
            return Err(GeometryError::BehindCamera { z: point.z });
        }
        Ok(Vector2::new(
            self.fx * point.x / point.z + self.cx,
            self.fy * point.y / point.z + self.cy,
        ))
    }

    /// Lift a pixel with inverse depth `rho` back to a camera-frame point.
    pub fn backproject(
        &self,
        pixel: &Vector2<f64>,
        inv_depth: f64,
    ) -> Result<Vector3<f64>, GeometryError> {
        if !(inv_depth > 0.0) || !inv_depth.is_finite() {
            return Err(GeometryError::InvalidInverseDepth { value: inv_depth });
        }
        let depth = 1.0 / inv_depth;
        Ok(Vector3::new(
            (pixel.x - self.cx) / self.fx * depth,
            (pixel.y - self.cy) / self.fy * depth,
            depth,
        ))
    }

    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x <= (self.width - 1) as f64
            && pixel.y <= (self.height - 1) as f64
    }

    /// Intrinsics of pyramid level `level`. With pixel centers at integer
    /// coordinates, a 2x2 box downsample maps `u -> (u - 0.5) / 2`.
    pub fn at_level(&self, level: usize) -> PinholeCamera {
        let scale = (1u64 << level) as f64;
        PinholeCamera {
            fx: self.fx / scale,
            fy: self.fy / scale,
            cx: (self.cx + 0.5) / scale - 0.5,
            cy: (self.cy + 0.5) / scale - 0.5,
            width: self.width >> level,
            height: self.height >> level,
        }
    }
}
