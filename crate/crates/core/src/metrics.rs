//! Return function and image quality metrics (MSE, PSNR, SSIM, CIE76 delta E).

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::{Image, CHANNELS};

/// Scale on which the squared error of the return is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MseScale {
    /// Mean squared error on `[0, 1]` values.
    Unit,
    /// Mean squared error on 255-scaled values. With alpha = 0.05 this
    /// spreads the return over a usable range instead of pinning it near 1.
    Byte,
}

/// Configuration of the terminal return `exp(-alpha * ||x - y||^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnConfig {
    pub alpha: f64,
    pub mse_scale: MseScale,
}

impl Default for ReturnConfig {
    fn default() -> Self {
        ReturnConfig {
            alpha: 0.05,
            mse_scale: MseScale::Byte,
        }
    }
}

/// Mean squared difference over all pixel-channels, on `[0, 1]` values.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_dims(b, "mse")?;
    let mut acc = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x as f64 - y as f64;
        acc += d * d;
    }
    Ok(acc / a.data().len() as f64)
}

/// Terminal return in `(0, 1]`: exactly 1 iff the images are identical.
pub fn return_r(x: &Image, y: &Image, cfg: &ReturnConfig) -> Result<f64> {
    let m = mse(x, y)?;
    let scaled = match cfg.mse_scale {
        MseScale::Unit => m,
        MseScale::Byte => m * 255.0 * 255.0,
    };
    Ok((-cfg.alpha * scaled).exp())
}

/// Peak signal-to-noise ratio in dB, capped at 100 for near-identical pairs.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m < 1e-10 {
        return Ok(100.0);
    }
    Ok(10.0 * (1.0 / m).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Mean local SSIM on luminance (BT.601 weights), 11x11 Gaussian window
/// with sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_dims(b, "ssim")?;
    let la = luminance(a);
    let lb = luminance(b);
    let (h, w) = a.dims();

    let window = gaussian_window();
    let radius = (SSIM_WINDOW / 2) as isize;
    let c1 = (SSIM_K1 * 1.0) * (SSIM_K1 * 1.0);
    let c2 = (SSIM_K2 * 1.0) * (SSIM_K2 * 1.0);

    let mut total = 0.0f64;
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            let mut aa = 0.0;
            let mut bb = 0.0;
            let mut ab = 0.0;
            for ky in 0..SSIM_WINDOW as isize {
                for kx in 0..SSIM_WINDOW as isize {
                    let wgt = window[(ky * SSIM_WINDOW as isize + kx) as usize];
                    let sy = (y + ky - radius).clamp(0, h as isize - 1) as usize;
                    let sx = (x + kx - radius).clamp(0, w as isize - 1) as usize;
                    let va = la[sy * w + sx];
                    let vb = lb[sy * w + sx];
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
        }
    }
    Ok(total / (h * w) as f64)
}

fn luminance(img: &Image) -> Vec<f64> {
    img.data()
        .chunks(CHANNELS)
        .map(|px| 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64)
        .collect()
}

fn gaussian_window() -> Vec<f64> {
    let radius = (SSIM_WINDOW / 2) as isize;
    let mut window = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    let mut sum = 0.0;
    for y in -radius..=radius {
        for x in -radius..=radius {
            let v = (-((y * y + x * x) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            window.push(v);
            sum += v;
        }
    }
    for v in &mut window {
        *v /= sum;
    }
    window
}

/// Mean per-pixel CIE76 delta E in CIELAB (sRGB primaries, D65 white).
pub fn delta_e(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_dims(b, "delta_e")?;
    let mut total = 0.0f64;
    for (pa, pb) in a.data().chunks(CHANNELS).zip(b.data().chunks(CHANNELS)) {
        let la = srgb_to_lab([pa[0], pa[1], pa[2]]);
        let lb = srgb_to_lab([pb[0], pb[1], pb[2]]);
        let d = (la[0] - lb[0]).powi(2) + (la[1] - lb[1]).powi(2) + (la[2] - lb[2]).powi(2);
        total += d.sqrt();
    }
    Ok(total / (a.height() * a.width()) as f64)
}

fn srgb_to_lab(rgb: [f32; 3]) -> [f64; 3] {
    fn linearize(v: f64) -> f64 {
        if v <= 0.04045 {
            v / 12.92
        } else {
            ((v + 0.055) / 1.055).powf(2.4)
        }
    }
    let r = linearize(rgb[0] as f64);
    let g = linearize(rgb[1] as f64);
    let b = linearize(rgb[2] as f64);

    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;

    // D65 reference white
    let (xn, yn, zn) = (0.95047, 1.0, 1.08883);
    fn f(t: f64) -> f64 {
        const DELTA: f64 = 6.0 / 29.0;
        if t > DELTA * DELTA * DELTA {
            t.cbrt()
        } else {
            t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
        }
    }
    let fx = f(x / xn);
    let fy = f(y / yn);
    let fz = f(z / zn);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}
