use crate::geometry::RgbImage;

use super::ssim::{ssim_rgb, ssim_rgb_with_gradient};
use super::FitError;

/// The fitting loss and its parts. `l_color_raw` is the plain sum of squared
/// RGB differences over all pixels; `l_color` is its per-pixel mean, which is
/// what the optimizer minimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_color_raw: f64,
    pub l_color: f64,
    pub l_ssim: f64,
    pub total: f64,
}

/// `total = λ·(1 - ssim) + (1-λ)·l_color`. With λ = 0 the SSIM term is
/// skipped entirely (and reported as 0), so tiny images stay usable.
pub fn compute_loss(
    rendered: &RgbImage,
    target: &RgbImage,
    lambda_ssim: f64,
    ssim_window: usize,
) -> Result<LossBreakdown, FitError> {
    if rendered.width() != target.width() || rendered.height() != target.height() {
        return Err(FitError::DimensionMismatch {
            a: (rendered.width(), rendered.height()),
            b: (target.width(), target.height()),
        });
    }
    let num_pixels = (rendered.width() * rendered.height()) as f64;
    let mut raw = 0.0;
    for (a, b) in rendered.pixels().iter().zip(target.pixels()) {
        for ch in 0..3 {
            let d = a[ch] - b[ch];
            raw += d * d;
        }
    }
    let l_color = raw / num_pixels;
    let l_ssim = if lambda_ssim > 0.0 {
        1.0 - ssim_rgb(rendered, target, ssim_window)?
    } else {
        0.0
    };
    Ok(LossBreakdown {
        l_color_raw: raw,
        l_color,
        l_ssim,
        total: lambda_ssim * l_ssim + (1.0 - lambda_ssim) * l_color,
    })
}

/// Same breakdown plus d(total)/d(rendered pixel) for the backward pass.
pub(crate) fn loss_with_image_gradient(
    rendered: &RgbImage,
    target: &RgbImage,
    lambda_ssim: f64,
    ssim_window: usize,
) -> Result<(LossBreakdown, Vec<[f64; 3]>), FitError> {
    let breakdown = compute_loss(rendered, target, lambda_ssim, ssim_window)?;
    let num_pixels = (rendered.width() * rendered.height()) as f64;
    let mut grad = vec![[0.0f64; 3]; rendered.pixels().len()];
    for (g, (a, b)) in grad
        .iter_mut()
        .zip(rendered.pixels().iter().zip(target.pixels()))
    {
        for ch in 0..3 {
            g[ch] = (1.0 - lambda_ssim) * 2.0 * (a[ch] - b[ch]) / num_pixels;
        }
    }
    if lambda_ssim > 0.0 {
        let (_, ssim_grad) = ssim_rgb_with_gradient(rendered, target, ssim_window)?;
        for (g, sg) in grad.iter_mut().zip(ssim_grad) {
            for ch in 0..3 {
                g[ch] -= lambda_ssim * sg[ch];
            }
        }
    }
    Ok((breakdown, grad))
}
