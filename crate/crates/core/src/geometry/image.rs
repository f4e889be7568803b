use nalgebra::Vector2;

use super::GeometryError;

/// Single-channel image with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// Three-channel image with values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<[f64; 3]>,
}

/// Unbounded scalar grid (depth maps, opacity maps), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self, GeometryError> {
        if data.len() != width * height {
            return Err(GeometryError::BufferSizeMismatch {
                got: data.len(),
                width,
                height,
            });
        }
        for (index, &value) in data.iter().enumerate() {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(GeometryError::InvalidIntensity { value, index });
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Bilinear interpolation at a subpixel position; integer positions return
    /// the stored value exactly.
    pub fn bilinear_sample(&self, position: &Vector2<f64>) -> Result<f64, GeometryError> {
        let (w00, w01, w10, w11, x0, y0) = self.bilinear_weights(position)?;
        let idx = y0 * self.width + x0;
        Ok(self.data[idx] * w00
            + self.data[idx + 1] * w01
            + self.data[idx + self.width] * w10
            + self.data[idx + self.width + 1] * w11)
    }

    /// Sample the image together with the exact derivative of the bilinear
    /// interpolant at this position (constant within each pixel cell).
    pub fn sample_with_gradient(
        &self,
        position: &Vector2<f64>,
    ) -> Result<(f64, Vector2<f64>), GeometryError> {
        let (w00, w01, w10, w11, x0, y0) = self.bilinear_weights(position)?;
        let idx = y0 * self.width + x0;
        let i00 = self.data[idx];
        let i01 = self.data[idx + 1];
        let i10 = self.data[idx + self.width];
        let i11 = self.data[idx + self.width + 1];
        let value = i00 * w00 + i01 * w01 + i10 * w10 + i11 * w11;
        let fx = position.x - x0 as f64;
        let fy = position.y - y0 as f64;
        let gx = (1.0 - fy) * (i01 - i00) + fy * (i11 - i10);
        let gy = (1.0 - fx) * (i10 - i00) + fx * (i11 - i01);
        Ok((value, Vector2::new(gx, gy)))
    }

    /// Image gradient (dx, dy) at a subpixel position, from bilinear
    /// interpolation of central differences on the pixel grid.
    pub fn gradient(&self, position: &Vector2<f64>) -> Result<Vector2<f64>, GeometryError> {
        let (w00, w01, w10, w11, x0, y0) = self.bilinear_weights(position)?;
        let mut gx = 0.0;
        let mut gy = 0.0;
        for (dx, dy, w) in [
            (0usize, 0usize, w00),
            (1, 0, w01),
            (0, 1, w10),
            (1, 1, w11),
        ] {
            let g = self.grid_gradient(x0 + dx, y0 + dy);
            gx += w * g.x;
            gy += w * g.y;
        }
        Ok(Vector2::new(gx, gy))
    }

    /// Central-difference gradient at an integer pixel (one-sided at borders).
    pub fn grid_gradient(&self, x: usize, y: usize) -> Vector2<f64> {
        let xm = x.saturating_sub(1);
        let xp = (x + 1).min(self.width - 1);
        let ym = y.saturating_sub(1);
        let yp = (y + 1).min(self.height - 1);
        Vector2::new(
            (self.get(xp, y) - self.get(xm, y)) / (xp - xm).max(1) as f64,
            (self.get(x, yp) - self.get(x, ym)) / (yp - ym).max(1) as f64,
        )
    }

    fn bilinear_weights(
        &self,
        position: &Vector2<f64>,
    ) -> Result<(f64, f64, f64, f64, usize, usize), GeometryError> {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if !(position.x >= 0.0 && position.x <= max_x && position.y >= 0.0 && position.y <= max_y) {
            return Err(GeometryError::OutOfBounds {
                x: position.x,
                y: position.y,
                width: self.width,
                height: self.height,
            });
        }
        let mut x0 = position.x.floor() as usize;
        let mut y0 = position.y.floor() as usize;
        // Keep the 2x2 support inside the image at the far edges.
        if x0 >= self.width - 1 {
            x0 = self.width - 2;
        }
        if y0 >= self.height - 1 {
            y0 = self.height - 2;
        }
        let fx = position.x - x0 as f64;
        let fy = position.y - y0 as f64;
        Ok((
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
            x0,
            y0,
        ))
    }
}

impl RgbImage {
    pub fn from_pixels(
        width: usize,
        height: usize,
        data: Vec<[f64; 3]>,
    ) -> Result<Self, GeometryError> {
        if data.len() != width * height {
            return Err(GeometryError::BufferSizeMismatch {
                got: data.len(),
                width,
                height,
            });
        }
        for (index, px) in data.iter().enumerate() {
            for &value in px {
                if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                    return Err(GeometryError::InvalidIntensity { value, index });
                }
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let p = f(x, y);
                data.push([
                    p[0].clamp(0.0, 1.0),
                    p[1].clamp(0.0, 1.0),
                    p[2].clamp(0.0, 1.0),
                ]);
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.data
    }

    /// Channel-mean grayscale conversion.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            let p = self.get(x, y);
            (p[0] + p[1] + p[2]) / 3.0
        })
    }
}

impl ScalarImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self, GeometryError> {
        if data.len() != width * height {
            return Err(GeometryError::BufferSizeMismatch {
                got: data.len(),
                width,
                height,
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Multi-scale pyramid; level 0 is full resolution, each level halves both
/// dimensions (floor) with a 2x2 box filter.
#[derive(Debug, Clone)]
pub struct ImagePyramid {
    levels: Vec<GrayImage>,
}

impl ImagePyramid {
    pub fn level(&self, index: usize) -> &GrayImage {
        &self.levels[index]
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn base(&self) -> &GrayImage {
        &self.levels[0]
    }
}

pub fn build_pyramid(image: &GrayImage, levels: usize) -> Result<ImagePyramid, GeometryError> {
    let min_dim = 1usize << levels.saturating_sub(1);
    if levels == 0 || image.width() < min_dim || image.height() < min_dim {
        return Err(GeometryError::ImageTooSmall {
            width: image.width(),
            height: image.height(),
            levels,
        });
    }
    let mut out = Vec::with_capacity(levels);
    out.push(image.clone());
    for _ in 1..levels {
        let prev = out.last().unwrap();
        let w = prev.width() / 2;
        let h = prev.height() / 2;
        let next = GrayImage::from_fn(w, h, |x, y| {
            0.25 * (prev.get(2 * x, 2 * y)
                + prev.get(2 * x + 1, 2 * y)
                + prev.get(2 * x, 2 * y + 1)
                + prev.get(2 * x + 1, 2 * y + 1))
        });
        out.push(next);
    }
    Ok(ImagePyramid { levels: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bilinear_on_constant_image() {
        let img = GrayImage::constant(8, 8, 0.7);
        for pos in [
            Vector2::new(0.0, 0.0),
            Vector2::new(3.25, 4.75),
            Vector2::new(7.0, 7.0),
        ] {
            assert_relative_eq!(img.bilinear_sample(&pos).unwrap(), 0.7, epsilon = 1e-15);
        }
    }

    #[test]
    fn bilinear_midpoint_of_ramp() {
        let img = GrayImage::from_vec(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let v = img.bilinear_sample(&Vector2::new(0.5, 0.0)).unwrap();
        assert_relative_eq!(v, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn bilinear_at_lattice_points_is_exact() {
        let img = GrayImage::from_fn(5, 4, |x, y| (x as f64 * 0.13 + y as f64 * 0.07) % 1.0);
        for y in 0..4 {
            for x in 0..5 {
                let v = img
                    .bilinear_sample(&Vector2::new(x as f64, y as f64))
                    .unwrap();
                assert_relative_eq!(v, img.get(x, y), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn bilinear_out_of_bounds_fails() {
        let img = GrayImage::constant(4, 4, 0.5);
        assert!(img.bilinear_sample(&Vector2::new(-0.1, 0.0)).is_err());
        assert!(img.bilinear_sample(&Vector2::new(3.01, 0.0)).is_err());
    }

    #[test]
    fn pyramid_of_constant_image_is_constant() {
        let img = GrayImage::constant(16, 16, 0.42);
        let pyr = build_pyramid(&img, 3).unwrap();
        for level in 0..3 {
            for &v in pyr.level(level).data() {
                assert_relative_eq!(v, 0.42, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn pyramid_level_one_is_block_means() {
        let data: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
        let img = GrayImage::from_vec(4, 4, data).unwrap();
        let pyr = build_pyramid(&img, 2).unwrap();
        let l1 = pyr.level(1);
        for y in 0..2 {
            for x in 0..2 {
                let mean = 0.25
                    * (img.get(2 * x, 2 * y)
                        + img.get(2 * x + 1, 2 * y)
                        + img.get(2 * x, 2 * y + 1)
                        + img.get(2 * x + 1, 2 * y + 1));
                assert_relative_eq!(l1.get(x, y), mean, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn pyramid_single_level_is_input() {
        let img = GrayImage::from_fn(5, 3, |x, y| ((x + y) % 2) as f64);
        let pyr = build_pyramid(&img, 1).unwrap();
        assert_eq!(pyr.num_levels(), 1);
        assert_eq!(pyr.level(0), &img);
    }

    #[test]
    fn pyramid_rejects_too_small_images() {
        let img = GrayImage::constant(4, 4, 0.1);
        assert!(build_pyramid(&img, 4).is_err());
    }

    #[test]
    fn pyramid_preserves_mean_for_power_of_two() {
        let img = GrayImage::from_fn(32, 32, |x, y| {
            0.5 + 0.4 * ((x as f64 * 0.7).sin() * (y as f64 * 0.3).cos())
        });
        let pyr = build_pyramid(&img, 4).unwrap();
        for level in 1..4 {
            assert_relative_eq!(pyr.level(level).mean(), img.mean(), epsilon = 1e-6);
        }
    }

    #[test]
    fn intensity_validation() {
        assert!(GrayImage::from_vec(2, 1, vec![0.0, 1.5]).is_err());
        assert!(GrayImage::from_vec(2, 1, vec![0.0, f64::NAN]).is_err());
        assert!(GrayImage::from_vec(2, 2, vec![0.0; 3]).is_err());
    }
}
