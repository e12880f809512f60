//! Spatial filters: 3x3 correlation, median, and separable Gaussian blur.
//! All filters use replicate (clamp-to-edge) padding, run independently per
//! channel, and clip the result to `[0, 1]`.

use crate::error::{Error, Result};
use crate::image::{clip, Image, CHANNELS};

/// Unsharp-masking kernel (sums to 1).
pub const SHARPEN: [f32; 9] = [
    -0.125, -0.125, -0.125, //
    -0.125, 2.0, -0.125, //
    -0.125, -0.125, -0.125,
];

/// Edge-enhancement kernel (sums to 1).
pub const EDGE_ENHANCE: [f32; 9] = [
    -0.5, -0.5, -0.5, //
    -0.5, 5.0, -0.5, //
    -0.5, -0.5, -0.5,
];

/// Detail kernel (sums to 0.99, used as printed).
pub const DETAIL: [f32; 9] = [
    0.0, -0.17, 0.0, //
    -0.17, 1.67, -0.17, //
    0.0, -0.17, 0.0,
];

/// Smoothing kernel (sums to 1.001, used as printed).
pub const SMOOTH: [f32; 9] = [
    0.077, 0.077, 0.077, //
    0.077, 0.385, 0.077, //
    0.077, 0.077, 0.077,
];

#[inline]
fn clamped(img: &Image, y: isize, x: isize, c: usize) -> f32 {
    let y = y.clamp(0, img.height() as isize - 1) as usize;
    let x = x.clamp(0, img.width() as isize - 1) as usize;
    img.get(y, x, c)
}

/// Correlate with a 3x3 kernel (no flip).
pub fn convolve3x3(img: &Image, kernel: &[f32; 9]) -> Image {
    let (h, w) = img.dims();
    let mut data = vec![0.0f32; h * w * CHANNELS];
    for y in 0..h as isize {
        for x in 0..w as isize {
            for c in 0..CHANNELS {
                let mut acc = 0.0f64;
                for ky in 0..3 {
                    for kx in 0..3 {
                        acc += kernel[(ky * 3 + kx) as usize] as f64
                            * clamped(img, y + ky - 1, x + kx - 1, c) as f64;
                    }
                }
                data[(y as usize * w + x as usize) * CHANNELS + c] = clip(acc as f32);
            }
        }
    }
    Image::new(h, w, data).expect("same geometry")
}

/// Replace each value with the median of its 3x3 neighborhood.
pub fn median3x3(img: &Image) -> Image {
    let (h, w) = img.dims();
    let mut data = vec![0.0f32; h * w * CHANNELS];
    let mut window = [0.0f32; 9];
    for y in 0..h as isize {
        for x in 0..w as isize {
            for c in 0..CHANNELS {
                let mut k = 0;
                for ky in -1..=1 {
                    for kx in -1..=1 {
                        window[k] = clamped(img, y + ky, x + kx, c);
                        k += 1;
                    }
                }
                window.sort_by(f32::total_cmp);
                data[(y as usize * w + x as usize) * CHANNELS + c] = window[4];
            }
        }
    }
    Image::new(h, w, data).expect("same geometry")
}

/// 1-D Gaussian taps truncated at `ceil(3*sigma)`, normalized to sum 1.
pub fn gaussian_taps(sigma: f32) -> Result<Vec<f32>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "gaussian sigma must be positive, got {sigma}"
        )));
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps = Vec::with_capacity((2 * radius + 1) as usize);
    let s2 = 2.0 * (sigma as f64) * (sigma as f64);
    let mut sum = 0.0f64;
    for i in -radius..=radius {
        let wgt = (-((i * i) as f64) / s2).exp();
        taps.push(wgt);
        sum += wgt;
    }
    Ok(taps.into_iter().map(|w| (w / sum) as f32).collect())
}

/// Separable Gaussian blur: horizontal then vertical pass.
pub fn gaussian_blur(img: &Image, sigma: f32) -> Result<Image> {
    let taps = gaussian_taps(sigma)?;
    let radius = (taps.len() / 2) as isize;
    let (h, w) = img.dims();

    let mut horizontal = vec![0.0f32; h * w * CHANNELS];
    for y in 0..h {
        for x in 0..w as isize {
            for c in 0..CHANNELS {
                let mut acc = 0.0f64;
                for (k, &t) in taps.iter().enumerate() {
                    acc += t as f64 * clamped(img, y as isize, x + k as isize - radius, c) as f64;
                }
                horizontal[(y * w + x as usize) * CHANNELS + c] = acc as f32;
            }
        }
    }
    let mid = Image::new(h, w, horizontal).expect("same geometry");

    let mut data = vec![0.0f32; h * w * CHANNELS];
    for y in 0..h as isize {
        for x in 0..w {
            for c in 0..CHANNELS {
                let mut acc = 0.0f64;
                for (k, &t) in taps.iter().enumerate() {
                    acc += t as f64 * clamped(&mid, y + k as isize - radius, x as isize, c) as f64;
                }
                data[(y as usize * w + x) * CHANNELS + c] = clip(acc as f32);
            }
        }
    }
    Ok(Image::new(h, w, data).expect("same geometry"))
}

#[cfg(test)]
mod tests {
    use super::*;
    
    use crate::testutil::random_image;

    #[test]
    fn kernel_sums_on_constant_images() {
        let c = 0.4f32;
        let img = Image::filled(4, 4, [c; 3]).unwrap();
        // smooth sums to 1.001, sharpen and edge enhance to exactly 1
        let smooth = convolve3x3(&img, &SMOOTH);
        assert!((smooth.get(1, 1, 0) - (c * 1.001)).abs() < 1e-6);
        let sharp = convolve3x3(&img, &SHARPEN);
        assert!((sharp.get(1, 1, 0) - c).abs() < 1e-6);
        let edge = convolve3x3(&img, &EDGE_ENHANCE);
        assert!((edge.get(1, 1, 0) - c).abs() < 1e-6);
        let detail = convolve3x3(&img, &DETAIL);
        assert!((detail.get(1, 1, 0) - c * 0.99).abs() < 1e-6);
    }

    #[test]
    fn median_constant_unchanged() {
        let img = Image::filled(5, 5, [0.3; 3]).unwrap();
        assert_eq!(median3x3(&img), img);
    }

    #[test]
    fn median_removes_single_impulse() {
        let mut img = Image::filled(5, 5, [0.0; 3]).unwrap();
        img.set_pixel(2, 2, [1.0; 3]);
        let out = median3x3(&img);
        for &v in out.data() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn median_matches_brute_force_oracle() {
        let img = random_image(21, 7, 6);
        let out = median3x3(&img);
        for y in 0..7isize {
            for x in 0..6isize {
                for c in 0..3 {
                    let mut vals = vec![];
                    for ky in -1..=1 {
                        for kx in -1..=1 {
                            vals.push(clamped(&img, y + ky, x + kx, c));
                        }
                    }
                    vals.sort_by(f32::total_cmp);
                    assert_eq!(out.get(y as usize, x as usize, c), vals[4]);
                }
            }
        }
    }

    #[test]
    fn gaussian_constant_unchanged() {
        let img = Image::filled(4, 6, [0.62; 3]).unwrap();
        let out = gaussian_blur(&img, 2.0).unwrap();
        for &v in out.data() {
            assert!((v - 0.62).abs() < 1e-6);
        }
    }

    #[test]
    fn gaussian_impulse_is_symmetric_and_separable() {
        let mut img = Image::filled(11, 11, [0.0; 3]).unwrap();
        img.set_pixel(5, 5, [1.0; 3]);
        let out = gaussian_blur(&img, 1.0).unwrap();
        for d in 0..5 {
            assert!((out.get(5, 5 + d, 0) - out.get(5 + d, 5, 0)).abs() < 1e-7);
            assert!((out.get(5, 5 + d, 0) - out.get(5, 5 - d, 0)).abs() < 1e-7);
        }
    }

    #[test]
    fn gaussian_step_edge_matches_dense_oracle() {
        // 1xN stripe processed by the separable path equals dense 1-D
        // convolution against replicate-padded samples.
        let n = 32usize;
        let mut data = vec![0.0f32; n * 3];
        for x in n / 2..n {
            for c in 0..3 {
                data[x * 3 + c] = 1.0;
            }
        }
        let img = Image::new(1, n, data).unwrap();
        let sigma = 2.0f32;
        let out = gaussian_blur(&img, sigma).unwrap();

        let taps = gaussian_taps(sigma).unwrap();
        let radius = taps.len() as isize / 2;
        for x in 0..n as isize {
            let mut acc = 0.0f64;
            for (k, &t) in taps.iter().enumerate() {
                let sx = (x + k as isize - radius).clamp(0, n as isize - 1) as usize;
                let v = if sx >= n / 2 { 1.0 } else { 0.0 };
                acc += t as f64 * v;
            }
            assert!(
                (out.get(0, x as usize, 1) as f64 - acc.clamp(0.0, 1.0)).abs() < 1e-5,
                "x={x}"
            );
        }
    }

    #[test]
    fn gaussian_rejects_non_positive_sigma() {
        let img = Image::filled(2, 2, [0.1; 3]).unwrap();
        assert!(gaussian_blur(&img, 0.0).is_err());
        assert!(gaussian_blur(&img, -1.0).is_err());
    }
}
