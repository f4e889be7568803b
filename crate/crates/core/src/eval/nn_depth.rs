use thiserror::Error;

use crate::data::PointSample;
use crate::geometry::{PinholeCamera, ScalarImage, SE3Pose};

/// Search radius (pixels) for nearest-neighbor depth fill.
pub const NN_SEARCH_RADIUS: f64 = 15.0;

#[derive(Debug, Error)]
pub enum InterpolationError {
    #[error("no cloud point projects into the image")]
    EmptyProjection,
    #[error("point cloud is empty")]
    EmptyCloud,
}

/// The discrete-map ablation baseline: z-buffer the cloud into pixels, then
/// fill every empty pixel from the nearest projected pixel within
/// [`NN_SEARCH_RADIUS`]. Pixels with no neighbor in range stay 0 (invalid).
pub fn interpolate_depth_nn(
    cloud: &[PointSample],
    world_to_camera: &SE3Pose,
    camera: &PinholeCamera,
) -> Result<ScalarImage, InterpolationError> {
    if cloud.is_empty() {
        return Err(InterpolationError::EmptyCloud);
    }
    let width = camera.width;
    let height = camera.height;
    let mut zbuffer = ScalarImage::zeros(width, height);
    let mut any = false;
    for point in cloud {
        let cam = world_to_camera.transform(&point.position);
        let Ok(pixel) = camera.project(&cam) else {
            continue;
        };
        let x = pixel.x.round();
        let y = pixel.y.round();
        if x < 0.0 || y < 0.0 || x > (width - 1) as f64 || y > (height - 1) as f64 {
            continue;
        }
        let (xi, yi) = (x as usize, y as usize);
        let current = zbuffer.get(xi, yi);
        if current == 0.0 || cam.z < current {
            zbuffer.set(xi, yi, cam.z);
        }
        any = true;
    }
    if !any {
        return Err(InterpolationError::EmptyProjection);
    }

    // Offsets inside the search radius, sorted by distance (ties by scan
    // order): the first hit is the nearest neighbor, deterministically.
    let r = NN_SEARCH_RADIUS.ceil() as i64;
    let mut offsets: Vec<(i64, i64, f64)> = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            let dist = ((dx * dx + dy * dy) as f64).sqrt();
            if dist <= NN_SEARCH_RADIUS && !(dx == 0 && dy == 0) {
                offsets.push((dx, dy, dist));
            }
        }
    }
    offsets.sort_by(|a, b| a.2.partial_cmp(&b.2).unwrap());

    let mut out = zbuffer.clone();
    for y in 0..height {
        for x in 0..width {
            if zbuffer.get(x, y) != 0.0 {
                continue;
            }
            for &(dx, dy, _) in &offsets {
                let nx = x as i64 + dx;
                let ny = y as i64 + dy;
                if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                    continue;
                }
                let neighbor = zbuffer.get(nx as usize, ny as usize);
                if neighbor != 0.0 {
                    out.set(x, y, neighbor);
                    break;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn camera() -> PinholeCamera {
        PinholeCamera::new(100.0, 100.0, 50.0, 50.0, 101, 101).unwrap()
    }

    #[test]
    fn dense_cloud_reproduces_zbuffer() {
        // One point per pixel at z = 2: output should be exactly 2 everywhere.
        let cam = camera();
        let mut cloud = Vec::new();
        for y in 0..101 {
            for x in 0..101 {
                let p = cam
                    .backproject(&nalgebra::Vector2::new(x as f64, y as f64), 0.5)
                    .unwrap();
                cloud.push(PointSample {
                    position: p,
                    color: None,
                });
            }
        }
        let depth = interpolate_depth_nn(&cloud, &SE3Pose::identity(), &cam).unwrap();
        for &d in depth.data() {
            assert!((d - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_point_fills_a_disc() {
        let cloud = vec![PointSample {
            position: Vector3::new(0.0, 0.0, 2.0),
            color: None,
        }];
        let depth = interpolate_depth_nn(&cloud, &SE3Pose::identity(), &camera()).unwrap();
        for y in 0..101i64 {
            for x in 0..101i64 {
                let dist = (((x - 50).pow(2) + (y - 50).pow(2)) as f64).sqrt();
                let value = depth.get(x as usize, y as usize);
                if dist <= NN_SEARCH_RADIUS {
                    assert!((value - 2.0).abs() < 1e-9, "({x},{y}) = {value}");
                } else {
                    assert_eq!(value, 0.0, "({x},{y}) should be invalid");
                }
            }
        }
    }

    #[test]
    fn zbuffer_keeps_nearest_point() {
        let cloud = vec![
            PointSample {
                position: Vector3::new(0.0, 0.0, 3.0),
                color: None,
            },
            PointSample {
                position: Vector3::new(0.0, 0.0, 2.0),
                color: None,
            },
        ];
        let depth = interpolate_depth_nn(&cloud, &SE3Pose::identity(), &camera()).unwrap();
        assert!((depth.get(50, 50) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn behind_camera_cloud_is_empty_projection() {
        let cloud = vec![PointSample {
            position: Vector3::new(0.0, 0.0, -2.0),
            color: None,
        }];
        assert!(matches!(
            interpolate_depth_nn(&cloud, &SE3Pose::identity(), &camera()),
            Err(InterpolationError::EmptyProjection)
        ));
    }
}
