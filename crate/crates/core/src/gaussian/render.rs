use nalgebra::Vector2;
use rayon::prelude::*;

use crate::geometry::{PinholeCamera, RgbImage, ScalarImage, SE3Pose};

use super::{project_gaussian_full, GaussianMap, MapError, Splat2D};

const TILE_SIZE: usize = 16;

/// Rasterization knobs. The defaults are the production path; tests that
/// compare against the term-by-term evaluator disable early termination, and
/// the map-fitting gradients run with `spatial_cutoff = None` so the forward
/// model is smooth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    /// Mahalanobis cutoff beyond which a splat contributes nothing; `None`
    /// evaluates every splat at every pixel.
    pub spatial_cutoff: Option<f64>,
    /// Stop compositing a pixel once transmittance drops below this; 0
    /// disables early termination.
    pub early_stop_transmittance: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            spatial_cutoff: Some(3.0),
            early_stop_transmittance: 1e-4,
        }
    }
}

impl RenderOptions {
    /// Smooth configuration used by the fitting gradients: no spatial cutoff,
    /// no early termination.
    pub fn smooth() -> Self {
        Self {
            spatial_cutoff: None,
            early_stop_transmittance: 0.0,
        }
    }
}

/// Color, alpha-weighted depth and accumulated opacity rendered at one pose.
///
/// Depth is left exactly as composited (`Σ z_i α_i Π (1-α_j)`), unnormalized;
/// consumers decide validity through the alpha map.
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub color: RgbImage,
    pub depth: ScalarImage,
    pub alpha: ScalarImage,
}

/// Splat the map at a pose. Front-to-back alpha compositing per pixel over
/// tiles; output is bit-identical regardless of worker count.
pub fn render(
    map: &GaussianMap,
    world_to_camera: &SE3Pose,
    camera: &PinholeCamera,
    options: &RenderOptions,
) -> Result<RenderedView, MapError> {
    if map.is_empty() {
        return Err(MapError::EmptyMap);
    }
    let cull = options.spatial_cutoff.is_some();
    let mut splats: Vec<Splat2D> = map
        .gaussians
        .iter()
        .filter_map(|g| project_gaussian_full(g, world_to_camera, camera, cull).map(|p| p.splat))
        .collect();
    splats.sort_by(|a, b| a.depth.partial_cmp(&b.depth).expect("finite splat depths"));

    let width = camera.width;
    let height = camera.height;
    let mut color = vec![[0.0f64; 3]; width * height];
    let mut depth = vec![0.0f64; width * height];
    let mut alpha = vec![0.0f64; width * height];

    match options.spatial_cutoff {
        Some(cutoff) => {
            let tiles_x = width.div_ceil(TILE_SIZE);
            let tiles_y = height.div_ceil(TILE_SIZE);
            // Bin splats per tile, preserving the global depth order.
            let mut tile_splats: Vec<Vec<usize>> = vec![Vec::new(); tiles_x * tiles_y];
            for (idx, splat) in splats.iter().enumerate() {
                let rx = cutoff * splat.cov[(0, 0)].max(0.0).sqrt();
                let ry = cutoff * splat.cov[(1, 1)].max(0.0).sqrt();
                let x0 = ((splat.mean.x - rx).floor().max(0.0) as usize).min(width - 1);
                let x1 = ((splat.mean.x + rx).ceil().max(0.0) as usize).min(width - 1);
                let y0 = ((splat.mean.y - ry).floor().max(0.0) as usize).min(height - 1);
                let y1 = ((splat.mean.y + ry).ceil().max(0.0) as usize).min(height - 1);
                if splat.mean.x + rx < 0.0 || splat.mean.y + ry < 0.0 {
                    continue;
                }
                for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
                    for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                        tile_splats[ty * tiles_x + tx].push(idx);
                    }
                }
            }

            let tile_results: Vec<TileBuffer> = (0..tiles_x * tiles_y)
                .into_par_iter()
                .map(|tile| {
                    let tx = tile % tiles_x;
                    let ty = tile / tiles_x;
                    let x0 = tx * TILE_SIZE;
                    let y0 = ty * TILE_SIZE;
                    let tw = TILE_SIZE.min(width - x0);
                    let th = TILE_SIZE.min(height - y0);
                    let mut buf = TileBuffer::new(x0, y0, tw, th);
                    for py in 0..th {
                        for px in 0..tw {
                            let pixel =
                                Vector2::new((x0 + px) as f64, (y0 + py) as f64);
                            let out = composite_pixel(
                                &pixel,
                                tile_splats[tile].iter().map(|&i| &splats[i]),
                                map.background,
                                Some(cutoff),
                                options.early_stop_transmittance,
                            );
                            buf.store(px, py, out);
                        }
                    }
                    buf
                })
                .collect();

            for buf in tile_results {
                buf.write_into(width, &mut color, &mut depth, &mut alpha);
            }
        }
        None => {
            // Smooth path: every splat contributes to every pixel.
            let rows: Vec<Vec<PixelOut>> = (0..height)
                .into_par_iter()
                .map(|y| {
                    (0..width)
                        .map(|x| {
                            composite_pixel(
                                &Vector2::new(x as f64, y as f64),
                                splats.iter(),
                                map.background,
                                None,
                                options.early_stop_transmittance,
                            )
                        })
                        .collect()
                })
                .collect();
            for (y, row) in rows.into_iter().enumerate() {
                for (x, out) in row.into_iter().enumerate() {
                    color[y * width + x] = out.color;
                    depth[y * width + x] = out.depth;
                    alpha[y * width + x] = out.alpha;
                }
            }
        }
    }

    Ok(RenderedView {
        color: RgbImage::from_fn(width, height, |x, y| color[y * width + x]),
        depth: ScalarImage::from_vec(width, height, depth).expect("sized buffer"),
        alpha: ScalarImage::from_vec(width, height, alpha).expect("sized buffer"),
    })
}

#[derive(Clone, Copy)]
struct PixelOut {
    color: [f64; 3],
    depth: f64,
    alpha: f64,
}

fn composite_pixel<'a>(
    pixel: &Vector2<f64>,
    splats: impl Iterator<Item = &'a Splat2D>,
    background: [f64; 3],
    cutoff: Option<f64>,
    early_stop: f64,
) -> PixelOut {
    let mut transmittance = 1.0f64;
    let mut color = [0.0f64; 3];
    let mut depth = 0.0f64;
    let mut alpha = 0.0f64;
    for splat in splats {
        let a = splat.alpha_at(pixel, cutoff);
        if a <= 0.0 {
            continue;
        }
        let weight = transmittance * a;
        for c in 0..3 {
            color[c] += weight * splat.color[c];
        }
        depth += weight * splat.depth;
        alpha += weight;
        transmittance *= 1.0 - a;
        if early_stop > 0.0 && transmittance < early_stop {
            break;
        }
    }
    for c in 0..3 {
        color[c] += transmittance * background[c];
    }
    PixelOut {
        color,
        depth,
        alpha,
    }
}

struct TileBuffer {
    x0: usize,
    y0: usize,
    width: usize,
    height: usize,
    pixels: Vec<PixelOut>,
}

impl TileBuffer {
    fn new(x0: usize, y0: usize, width: usize, height: usize) -> Self {
        Self {
            x0,
            y0,
            width,
            height,
            pixels: vec![
                PixelOut {
                    color: [0.0; 3],
                    depth: 0.0,
                    alpha: 0.0
                };
                width * height
            ],
        }
    }

    fn store(&mut self, x: usize, y: usize, out: PixelOut) {
        self.pixels[y * self.width + x] = out;
    }

    fn write_into(
        &self,
        image_width: usize,
        color: &mut [[f64; 3]],
        depth: &mut [f64],
        alpha: &mut [f64],
    ) {
        for y in 0..self.height {
            for x in 0..self.width {
                let src = self.pixels[y * self.width + x];
                let dst = (self.y0 + y) * image_width + self.x0 + x;
                color[dst] = src.color;
                depth[dst] = src.depth;
                alpha[dst] = src.alpha;
            }
        }
    }
}

/// Term-by-term evaluation of the compositing sums: for every pixel, walk the
/// full depth-sorted splat list with no tiling and no early termination. Slow;
/// exists as the reference the fast path is checked against.
pub fn render_reference(
    map: &GaussianMap,
    world_to_camera: &SE3Pose,
    camera: &PinholeCamera,
    options: &RenderOptions,
) -> Result<RenderedView, MapError> {
    if map.is_empty() {
        return Err(MapError::EmptyMap);
    }
    let cull = options.spatial_cutoff.is_some();
    let mut splats: Vec<Splat2D> = map
        .gaussians
        .iter()
        .filter_map(|g| project_gaussian_full(g, world_to_camera, camera, cull).map(|p| p.splat))
        .collect();
    splats.sort_by(|a, b| a.depth.partial_cmp(&b.depth).expect("finite splat depths"));

    let width = camera.width;
    let height = camera.height;
    let mut color = vec![[0.0f64; 3]; width * height];
    let mut depth = ScalarImage::zeros(width, height);
    let mut alpha = ScalarImage::zeros(width, height);
    for y in 0..height {
        for x in 0..width {
            let pixel = Vector2::new(x as f64, y as f64);
            let mut transmittance = 1.0f64;
            let mut c = [0.0f64; 3];
            let mut d = 0.0f64;
            let mut a_sum = 0.0f64;
            for splat in &splats {
                let a = splat.alpha_at(&pixel, options.spatial_cutoff);
                if a <= 0.0 {
                    continue;
                }
                for ch in 0..3 {
                    c[ch] += splat.color[ch] * a * transmittance;
                }
                d += splat.depth * a * transmittance;
                a_sum += a * transmittance;
                transmittance *= 1.0 - a;
            }
            for ch in 0..3 {
                c[ch] += transmittance * map.background[ch];
            }
            color[y * width + x] = c;
            depth.set(x, y, d);
            alpha.set(x, y, a_sum);
        }
    }
    Ok(RenderedView {
        color: RgbImage::from_fn(width, height, |x, y| color[y * width + x]),
        depth,
        alpha,
    })
}
