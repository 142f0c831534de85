//! PSNR and SSIM.

use crate::error::{Error, Result};
use crate::field::RealField;

/// Value reported for a zero-error PSNR.
pub const PSNR_CAP: f64 = 99.99;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_shapes(test: &RealField, reference: &RealField) -> Result<()> {
    if test.shape() != reference.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", test.shape(), reference.shape())));
    }
    Ok(())
}

/// `10·log₁₀(peak²/MSE)` with `peak = max(reference)`, capped at [`PSNR_CAP`].
pub fn psnr(test: &RealField, reference: &RealField) -> Result<f64> {
    check_shapes(test, reference)?;
    let n = reference.data().len() as f64;
    let mse = test.data().iter().zip(reference.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    let peak = reference.max();
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering with the SSIM window.
fn filter(data: &[f64], h: usize, w: usize, g: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..k).map(|i| g[i] * data[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..k).map(|i| g[i] * rows[(r + i) * ow + c]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean local SSIM over every fully contained 11×11 Gaussian window
/// (σ = 1.5), with dynamic range `max(ref) − min(ref)`.
pub fn ssim(test: &RealField, reference: &RealField) -> Result<f64> {
    check_shapes(test, reference)?;
    let (h, w) = reference.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidParameter(format!("image {h}x{w} smaller than the SSIM window")));
    }
    let range = reference.max() - reference.min();
    if range <= 0.0 {
        return Err(Error::Degenerate("reference has zero dynamic range".into()));
    }
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let g = gaussian_window();
    let (x, y) = (test.data(), reference.data());
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let (mx, oh, ow) = filter(x, h, w, &g);
    let (my, _, _) = filter(y, h, w, &g);
    let (sxx, _, _) = filter(&xx, h, w, &g);
    let (syy, _, _) = filter(&yy, h, w, &g);
    let (sxy, _, _) = filter(&xy, h, w, &g);
    let mut total = 0.0;
    for i in 0..oh * ow {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cxy = sxy[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / (oh * ow) as f64)
}
