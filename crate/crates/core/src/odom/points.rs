use nalgebra::Vector2;

use crate::geometry::{GrayImage, ScalarImage};

use super::{OdometryConfig, TrackError};

/// Residual pattern: the pixel itself plus seven neighbors within a 2-pixel
/// radius.
pub const PATTERN: [(i32, i32); 8] = [
    (0, 0),
    (-2, 0),
    (2, 0),
    (0, -2),
    (0, 2),
    (-1, -1),
    (1, -1),
    (-1, 1),
];

/// Border kept free so the pattern and its gradients stay inside the image.
pub const PATTERN_MARGIN: usize = 3;

/// Pixels selected for extraction are grouped into blocks of this size, each
/// with its own dynamic threshold.
const BLOCK: usize = 32;

/// A tracked pixel: its host-frame position, the inverse depth assigned from
/// the rendered map, and the cached host intensities of the residual pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackPoint {
    pub pixel: Vector2<f64>,
    pub inv_depth: f64,
    pub host_frame_id: u64,
    pub pattern_intensities: [f64; PATTERN.len()],
}

/// Select high-gradient pixels over a grid of blocks: per block the dynamic
/// threshold is the block's median gradient magnitude plus
/// `gradient_threshold`, and the strongest survivors are taken round-robin
/// across blocks up to `target_points`.
pub fn extract_high_gradient_points(
    image: &GrayImage,
    config: &OdometryConfig,
) -> Result<Vec<(usize, usize)>, TrackError> {
    let width = image.width();
    let height = image.height();
    if width <= 2 * PATTERN_MARGIN || height <= 2 * PATTERN_MARGIN {
        return Err(TrackError::DegenerateImage { found: 0 });
    }
    let blocks_x = width.div_ceil(BLOCK);
    let blocks_y = height.div_ceil(BLOCK);
    let mut block_pixels: Vec<Vec<(f64, usize, usize)>> =
        vec![Vec::new(); blocks_x * blocks_y];
    for y in PATTERN_MARGIN..height - PATTERN_MARGIN {
        for x in PATTERN_MARGIN..width - PATTERN_MARGIN {
            let g = image.grid_gradient(x, y);
            let magnitude = g.norm();
            block_pixels[(y / BLOCK) * blocks_x + x / BLOCK].push((magnitude, x, y));
        }
    }

    // Per-block candidates above median + threshold, strongest first.
    let mut per_block: Vec<Vec<(f64, usize, usize)>> = block_pixels
        .into_iter()
        .map(|mut pixels| {
            if pixels.is_empty() {
                return Vec::new();
            }
            let mut magnitudes: Vec<f64> = pixels.iter().map(|p| p.0).collect();
            magnitudes.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = magnitudes[magnitudes.len() / 2];
            let threshold = median + config.gradient_threshold;
            pixels.retain(|&(m, _, _)| m > threshold);
            pixels.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .unwrap()
                    .then(a.2.cmp(&b.2))
                    .then(a.1.cmp(&b.1))
            });
            pixels
        })
        .collect();

    // Round-robin across blocks keeps the selection spread out.
    let mut selected = Vec::new();
    let mut cursor = vec![0usize; per_block.len()];
    'outer: loop {
        let mut any = false;
        for (block, candidates) in per_block.iter_mut().enumerate() {
            if cursor[block] < candidates.len() {
                let (_, x, y) = candidates[cursor[block]];
                cursor[block] += 1;
                selected.push((x, y));
                any = true;
                if selected.len() >= config.target_points {
                    break 'outer;
                }
            }
        }
        if !any {
            break;
        }
    }
    if selected.len() < config.min_points {
        return Err(TrackError::DegenerateImage {
            found: selected.len(),
        });
    }
    selected.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(selected)
}

/// One-to-one depth association: a pixel keeps the rendered depth under it,
/// normalized by the accumulated alpha (`inv_depth = alpha / depth`), and is
/// dropped entirely when the alpha is below `alpha_valid`. No interpolation.
///
/// Pixels whose valid neighbors disagree about the normalized depth (the
/// blended band along occlusion edges) carry a surface mixture rather than a
/// surface depth and are dropped as well.
pub fn associate_depth(
    pixels: &[(usize, usize)],
    image: &GrayImage,
    depth_map: &ScalarImage,
    alpha_map: &ScalarImage,
    host_frame_id: u64,
    config: &OdometryConfig,
) -> Result<Vec<TrackPoint>, TrackError> {
    let normalized = |x: usize, y: usize| -> Option<f64> {
        let alpha = alpha_map.get(x, y);
        let depth = depth_map.get(x, y);
        if alpha < config.alpha_valid || depth <= 0.0 {
            return None;
        }
        let d = depth / alpha;
        d.is_finite().then_some(d)
    };
    let mut points = Vec::with_capacity(pixels.len());
    for &(x, y) in pixels {
        let Some(center_depth) = normalized(x, y) else {
            continue;
        };
        let inv_depth = 1.0 / center_depth;
        if !inv_depth.is_finite() || inv_depth <= 0.0 {
            continue;
        }
        let mut coherent = true;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let nx = (x as i64 + dx).clamp(0, depth_map.width() as i64 - 1) as usize;
                let ny = (y as i64 + dy).clamp(0, depth_map.height() as i64 - 1) as usize;
                if let Some(neighbor) = normalized(nx, ny) {
                    if (neighbor - center_depth).abs()
                        > config.depth_consistency * center_depth
                    {
                        coherent = false;
                    }
                }
            }
        }
        if !coherent {
            continue;
        }
        let mut pattern_intensities = [0.0; PATTERN.len()];
        for (k, (dx, dy)) in PATTERN.iter().enumerate() {
            pattern_intensities[k] =
                image.get((x as i32 + dx) as usize, (y as i32 + dy) as usize);
        }
        points.push(TrackPoint {
            pixel: Vector2::new(x as f64, y as f64),
            inv_depth,
            host_frame_id,
            pattern_intensities,
        });
    }
    if points.is_empty() {
        return Err(TrackError::NoValidDepth);
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> OdometryConfig {
        OdometryConfig::default()
    }

    #[test]
    fn constant_image_is_degenerate() {
        let image = GrayImage::constant(128, 128, 0.5);
        assert!(matches!(
            extract_high_gradient_points(&image, &config()),
            Err(TrackError::DegenerateImage { .. })
        ));
    }

    #[test]
    fn step_edge_points_stay_near_the_edge() {
        let column = 60;
        let image = GrayImage::from_fn(128, 128, |x, _| if x < column { 0.1 } else { 0.9 });
        let mut cfg = config();
        cfg.min_points = 20;
        let points = extract_high_gradient_points(&image, &cfg).unwrap();
        assert!(points.len() >= 20);
        for &(x, _) in &points {
            assert!(
                (x as i64 - column as i64).abs() <= 1,
                "point at column {x} too far from edge"
            );
        }
    }

    #[test]
    fn checkerboard_selection_is_capped_and_spread() {
        let image = GrayImage::from_fn(640, 480, |x, y| {
            if ((x / 8) + (y / 8)) % 2 == 0 {
                0.15
            } else {
                0.85
            }
        });
        let mut cfg = config();
        cfg.target_points = 2000;
        let points = extract_high_gradient_points(&image, &cfg).unwrap();
        assert!(points.len() <= 2000);
        assert!(points.len() > 1000);
        let blocks_x = 640usize.div_ceil(BLOCK);
        let blocks_y = 480usize.div_ceil(BLOCK);
        let mut hit = vec![false; blocks_x * blocks_y];
        for &(x, y) in &points {
            hit[(y / BLOCK) * blocks_x + x / BLOCK] = true;
        }
        let covered = hit.iter().filter(|&&h| h).count();
        assert!(
            covered as f64 >= 0.9 * (blocks_x * blocks_y) as f64,
            "only {covered}/{} blocks covered",
            blocks_x * blocks_y
        );
    }

    #[test]
    fn association_normalizes_by_alpha_and_drops_empty() {
        let image = GrayImage::constant(32, 32, 0.5);
        let mut depth = ScalarImage::zeros(32, 32);
        let mut alpha = ScalarImage::zeros(32, 32);
        depth.set(10, 10, 1.998);
        alpha.set(10, 10, 0.999);
        depth.set(20, 20, 3.0);
        alpha.set(20, 20, 0.2); // below alpha_valid, dropped
        let pixels = vec![(10, 10), (20, 20), (5, 5)];
        let points =
            associate_depth(&pixels, &image, &depth, &alpha, 3, &config()).unwrap();
        assert_eq!(points.len(), 1);
        assert!((points[0].inv_depth - 0.5).abs() < 1e-12);
        assert_eq!(points[0].host_frame_id, 3);
    }

    #[test]
    fn association_is_one_to_one_in_order() {
        let image = GrayImage::constant(32, 32, 0.5);
        let depth = ScalarImage::from_fn(32, 32, |x, _| 1.0 + x as f64);
        let alpha = ScalarImage::from_fn(32, 32, |_, _| 1.0);
        let pixels: Vec<(usize, usize)> = (4..28).map(|i| (i, 16)).collect();
        let points =
            associate_depth(&pixels, &image, &depth, &alpha, 0, &config()).unwrap();
        assert_eq!(points.len(), pixels.len());
        for (point, &(x, y)) in points.iter().zip(&pixels) {
            assert_eq!(point.pixel, Vector2::new(x as f64, y as f64));
            assert!((point.inv_depth - 1.0 / (1.0 + x as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn all_dropped_is_an_error() {
        let image = GrayImage::constant(16, 16, 0.5);
        let depth = ScalarImage::zeros(16, 16);
        let alpha = ScalarImage::zeros(16, 16);
        assert!(matches!(
            associate_depth(&[(4, 4)], &image, &depth, &alpha, 0, &config()),
            Err(TrackError::NoValidDepth)
        ));
    }
}
