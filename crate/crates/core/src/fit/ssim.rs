use crate::geometry::{GrayImage, RgbImage};

use super::FitError;

const C1: f64 = 1e-4; // (0.01)² on the [0,1] range
const C2: f64 = 9e-4; // (0.03)²

/// Mean local SSIM over all fully-interior uniform windows.
pub fn ssim_gray(a: &GrayImage, b: &GrayImage, window: usize) -> Result<f64, FitError> {
    check_dims(a.width(), a.height(), b.width(), b.height(), window)?;
    Ok(ssim_channel(
        a.data(),
        b.data(),
        a.width(),
        a.height(),
        window,
        None,
    ))
}

/// SSIM applied per RGB channel and averaged.
pub fn ssim_rgb(a: &RgbImage, b: &RgbImage, window: usize) -> Result<f64, FitError> {
    check_dims(a.width(), a.height(), b.width(), b.height(), window)?;
    let mut total = 0.0;
    for ch in 0..3 {
        let xa: Vec<f64> = a.pixels().iter().map(|p| p[ch]).collect();
        let xb: Vec<f64> = b.pixels().iter().map(|p| p[ch]).collect();
        total += ssim_channel(&xa, &xb, a.width(), a.height(), window, None);
    }
    Ok(total / 3.0)
}

/// SSIM of `x` against `y` together with `d(ssim)/dx` per pixel and channel.
pub(crate) fn ssim_rgb_with_gradient(
    x: &RgbImage,
    y: &RgbImage,
    window: usize,
) -> Result<(f64, Vec<[f64; 3]>), FitError> {
    check_dims(x.width(), x.height(), y.width(), y.height(), window)?;
    let mut grad = vec![[0.0f64; 3]; x.width() * x.height()];
    let mut total = 0.0;
    for ch in 0..3 {
        let xa: Vec<f64> = x.pixels().iter().map(|p| p[ch]).collect();
        let xb: Vec<f64> = y.pixels().iter().map(|p| p[ch]).collect();
        let mut channel_grad = vec![0.0f64; xa.len()];
        total += ssim_channel(
            &xa,
            &xb,
            x.width(),
            x.height(),
            window,
            Some(&mut channel_grad),
        );
        for (g, &v) in grad.iter_mut().zip(channel_grad.iter()) {
            // Channel average contributes 1/3 to the total.
            g[ch] = v / 3.0;
        }
    }
    Ok((total / 3.0, grad))
}

fn check_dims(
    aw: usize,
    ah: usize,
    bw: usize,
    bh: usize,
    window: usize,
) -> Result<(), FitError> {
    if aw != bw || ah != bh {
        return Err(FitError::DimensionMismatch {
            a: (aw, ah),
            b: (bw, bh),
        });
    }
    if window % 2 == 0 || window == 0 || window > aw || window > ah {
        return Err(FitError::BadSsimWindow {
            window,
            width: aw,
            height: ah,
        });
    }
    Ok(())
}

/// Mean SSIM of one channel; optionally scatters d(mean SSIM)/dx into `grad`.
fn ssim_channel(
    x: &[f64],
    y: &[f64],
    width: usize,
    height: usize,
    window: usize,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let n = (window * window) as f64;
    let positions_x = width - window + 1;
    let positions_y = height - window + 1;
    let num_windows = (positions_x * positions_y) as f64;
    let mut total = 0.0;
    for wy in 0..positions_y {
        for wx in 0..positions_x {
            let mut sum_x = 0.0;
            let mut sum_y = 0.0;
            let mut sum_xx = 0.0;
            let mut sum_yy = 0.0;
            let mut sum_xy = 0.0;
            for dy in 0..window {
                let row = (wy + dy) * width + wx;
                for dx in 0..window {
                    let (xv, yv) = (x[row + dx], y[row + dx]);
                    sum_x += xv;
                    sum_y += yv;
                    sum_xx += xv * xv;
                    sum_yy += yv * yv;
                    sum_xy += xv * yv;
                }
            }
            let mu_x = sum_x / n;
            let mu_y = sum_y / n;
            let var_x = sum_xx / n - mu_x * mu_x;
            let var_y = sum_yy / n - mu_y * mu_y;
            let cov_xy = sum_xy / n - mu_x * mu_y;
            let a1 = 2.0 * mu_x * mu_y + C1;
            let a2 = 2.0 * cov_xy + C2;
            let b1 = mu_x * mu_x + mu_y * mu_y + C1;
            let b2 = var_x + var_y + C2;
            let denom = b1 * b2;
            let s = a1 * a2 / denom;
            total += s;

            if let Some(g) = grad.as_deref_mut() {
                // d s / d x_p for every pixel p of this window; the mean over
                // windows contributes 1/num_windows.
                let scale = 1.0 / (num_windows * n * denom);
                for dy in 0..window {
                    let row = (wy + dy) * width + wx;
                    for dx in 0..window {
                        let idx = row + dx;
                        let d_a1 = 2.0 * mu_y;
                        let d_a2 = 2.0 * (y[idx] - mu_y);
                        let d_b1 = 2.0 * mu_x;
                        let d_b2 = 2.0 * (x[idx] - mu_x);
                        g[idx] += scale
                            * (d_a1 * a2 + a1 * d_a2 - s * (d_b1 * b2 + b1 * d_b2));
                    }
                }
            }
        }
    }
    total / num_windows
}
