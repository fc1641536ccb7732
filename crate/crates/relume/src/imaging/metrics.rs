//! MSE, PSNR and SSIM between frames of matching geometry.

use super::PixelFrame;
use crate::error::{Error, Result};

/// PSNR reported for a zero-error pair instead of infinity.
pub const PSNR_CAP_DB: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_dims(a: &impl PixelFrame, b: &impl PixelFrame) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::invalid("metric inputs must share dimensions"));
    }
    Ok(())
}

/// Mean squared per-channel difference.
pub fn mse(a: &impl PixelFrame, b: &impl PixelFrame) -> Result<f64> {
    check_dims(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// `10 * log10(1 / mse)` for data in `[0, 1]`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &impl PixelFrame, b: &impl PixelFrame) -> Result<f64> {
    let err = mse(a, b)?;
    if err < 1e-10 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / err).log10()).min(PSNR_CAP_DB))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Mean structural similarity over all fully-interior 11x11 windows,
/// Gaussian-weighted (sigma 1.5), averaged over channels. Assumes data in
/// `[0, 1]`.
pub fn ssim(a: &impl PixelFrame, b: &impl PixelFrame) -> Result<f64> {
    check_dims(a, b)?;
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim requires frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}",
        )));
    }
    let kernel = gaussian_kernel();
    let c1 = (SSIM_K1 * SSIM_K1) as f64;
    let c2 = (SSIM_K2 * SSIM_K2) as f64;
    let half = SSIM_WINDOW / 2;

    let da = a.data();
    let db = b.data();
    let mut total = 0.0;
    let mut windows = 0usize;
    for c in 0..ch {
        for cy in half..h - half {
            for cx in half..w - half {
                let mut mu_a = 0.0;
                let mut mu_b = 0.0;
                let mut aa = 0.0;
                let mut bb = 0.0;
                let mut ab = 0.0;
                for (ky, wy) in kernel.iter().enumerate() {
                    let y = cy + ky - half;
                    for (kx, wx) in kernel.iter().enumerate() {
                        let x = cx + kx - half;
                        let wgt = wy * wx;
                        let va = da[(y * w + x) * ch + c] as f64;
                        let vb = db[(y * w + x) * ch + c] as f64;
                        mu_a += wgt * va;
                        mu_b += wgt * vb;
                        aa += wgt * va * va;
                        bb += wgt * vb * vb;
                        ab += wgt * va * vb;
                    }
                }
                let var_a = aa - mu_a * mu_a;
                let var_b = bb - mu_b * mu_b;
                let cov = ab - mu_a * mu_b;
                let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
                let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
                total += num / den;
                windows += 1;
            }
        }
    }
    Ok(total / windows as f64)
}
