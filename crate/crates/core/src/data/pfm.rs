use std::fs;
use std::io::Write;
use std::path::Path;

use crate::geometry::ScalarImage;

use super::DataError;

/// Write a single-channel portable float map (32-bit float, little-endian,
/// rows bottom to top as the format requires).
pub fn write_pfm(path: &Path, image: &ScalarImage) -> Result<(), DataError> {
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = fs::File::create(path).map_err(io_err)?;
    write!(out, "Pf\n{} {}\n-1.0\n", image.width(), image.height()).map_err(io_err)?;
    let mut body = Vec::with_capacity(image.width() * image.height() * 4);
    for y in (0..image.height()).rev() {
        for x in 0..image.width() {
            body.extend_from_slice(&(image.get(x, y) as f32).to_le_bytes());
        }
    }
    out.write_all(&body).map_err(io_err)
}

pub fn read_pfm(path: &Path) -> Result<ScalarImage, DataError> {
    let malformed = |reason: &str| DataError::Image {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut offset = 0usize;
    let mut next_token = || -> Result<String, DataError> {
        while offset < bytes.len() && bytes[offset].is_ascii_whitespace() {
            offset += 1;
        }
        let start = offset;
        while offset < bytes.len() && !bytes[offset].is_ascii_whitespace() {
            offset += 1;
        }
        if start == offset {
            return Err(DataError::Image {
                path: path.to_path_buf(),
                reason: "truncated header".to_string(),
            });
        }
        let token = String::from_utf8_lossy(&bytes[start..offset]).to_string();
        offset += 1; // single whitespace after each header token
        Ok(token)
    };
    if next_token()? != "Pf" {
        return Err(malformed("not a grayscale pfm"));
    }
    let width: usize = next_token()?.parse().map_err(|_| malformed("bad width"))?;
    let height: usize = next_token()?.parse().map_err(|_| malformed("bad height"))?;
    let scale: f64 = next_token()?.parse().map_err(|_| malformed("bad scale"))?;
    if scale >= 0.0 {
        return Err(malformed("big-endian pfm not supported"));
    }
    let body = &bytes[offset..];
    if body.len() < width * height * 4 {
        return Err(malformed("truncated body"));
    }
    let mut image = ScalarImage::zeros(width, height);
    let mut cursor = 0usize;
    for y in (0..height).rev() {
        for x in 0..width {
            let value = f32::from_le_bytes(body[cursor..cursor + 4].try_into().unwrap());
            image.set(x, y, value as f64);
            cursor += 4;
        }
    }
    Ok(image)
}
