use std::path::Path;

use crate::geometry::{GrayImage, RgbImage};

use super::DataError;

/// Load an 8-bit RGB or grayscale PNG, normalizing intensities to [0, 1].
pub fn load_png(path: &Path) -> Result<RgbImage, DataError> {
    if !path.exists() {
        return Err(DataError::MissingFile {
            path: path.to_path_buf(),
        });
    }
    let decoded = image::open(path).map_err(|e| DataError::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = decoded.to_rgb8();
    let (width, height) = (rgb.width() as usize, rgb.height() as usize);
    Ok(RgbImage::from_fn(width, height, |x, y| {
        let p = rgb.get_pixel(x as u32, y as u32);
        [
            p.0[0] as f64 / 255.0,
            p.0[1] as f64 / 255.0,
            p.0[2] as f64 / 255.0,
        ]
    }))
}

pub fn save_rgb_png(path: &Path, image: &RgbImage) -> Result<(), DataError> {
    let mut buffer = image::RgbImage::new(image.width() as u32, image.height() as u32);
    for y in 0..image.height() {
        for x in 0..image.width() {
            let p = image.get(x, y);
            buffer.put_pixel(
                x as u32,
                y as u32,
                image::Rgb([quantize(p[0]), quantize(p[1]), quantize(p[2])]),
            );
        }
    }
    buffer
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| DataError::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

pub fn save_gray_png(path: &Path, image: &GrayImage) -> Result<(), DataError> {
    let mut buffer = image::GrayImage::new(image.width() as u32, image.height() as u32);
    for y in 0..image.height() {
        for x in 0..image.width() {
            buffer.put_pixel(x as u32, y as u32, image::Luma([quantize(image.get(x, y))]));
        }
    }
    buffer
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| DataError::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

fn quantize(value: f64) -> u8 {
    (value * 255.0).round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_within_quantization() {
        let dir = std::env::temp_dir().join("splatvo_png");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("img.png");
        let image = RgbImage::from_fn(9, 6, |x, y| {
            [
                x as f64 / 8.0,
                y as f64 / 5.0,
                ((x + y) % 2) as f64,
            ]
        });
        save_rgb_png(&path, &image).unwrap();
        let loaded = load_png(&path).unwrap();
        assert_eq!(loaded.width(), 9);
        assert_eq!(loaded.height(), 6);
        for (a, b) in loaded.pixels().iter().zip(image.pixels()) {
            for ch in 0..3 {
                assert!((a[ch] - b[ch]).abs() <= 0.5 / 255.0 + 1e-9);
            }
        }
    }
}
