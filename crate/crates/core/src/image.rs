//! Dense RGB raster in `[0, 1]` and the color/geometry primitives built on it.

use crate::error::{Error, Result};

/// Clamp a value to the `[0, 1]` range.
#[inline]
pub fn clip(v: f32) -> f32 {
    v.clamp(0.0, 1.0)
}

/// An RGB image stored as row-major interleaved `f32` intensities.
///
/// Every catalog operation keeps stored values inside `[0, 1]`; raw
/// intermediate buffers may exceed the range before clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

pub const CHANNELS: usize = 3;

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidGeometry(format!(
                "image dimensions must be at least 1x1, got {height}x{width}"
            )));
        }
        if data.len() != height * width * CHANNELS {
            return Err(Error::InvalidGeometry(format!(
                "data length {} does not match {height}x{width}x{CHANNELS}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Image filled with a single RGB color.
    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * CHANNELS;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn check_same_dims(&self, other: &Image, context: &'static str) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dims(),
                got: other.dims(),
                context,
            })
        }
    }

    /// Bilinear resize with half-pixel center alignment.
    pub fn resize(&self, height: usize, width: usize) -> Result<Image> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidGeometry(format!(
                "resize target must be at least 1x1, got {height}x{width}"
            )));
        }
        if height == self.height && width == self.width {
            return Ok(self.clone());
        }
        let scale_y = self.height as f64 / height as f64;
        let scale_x = self.width as f64 / width as f64;
        let mut data = vec![0.0f32; height * width * CHANNELS];
        for oy in 0..height {
            let sy = (oy as f64 + 0.5) * scale_y - 0.5;
            let y0 = sy.floor();
            let fy = sy - y0;
            let y0i = (y0 as isize).clamp(0, self.height as isize - 1) as usize;
            let y1i = ((y0 as isize) + 1).clamp(0, self.height as isize - 1) as usize;
            for ox in 0..width {
                let sx = (ox as f64 + 0.5) * scale_x - 0.5;
                let x0 = sx.floor();
                let fx = sx - x0;
                let x0i = (x0 as isize).clamp(0, self.width as isize - 1) as usize;
                let x1i = ((x0 as isize) + 1).clamp(0, self.width as isize - 1) as usize;
                for c in 0..CHANNELS {
                    let v00 = self.get(y0i, x0i, c) as f64;
                    let v01 = self.get(y0i, x1i, c) as f64;
                    let v10 = self.get(y1i, x0i, c) as f64;
                    let v11 = self.get(y1i, x1i, c) as f64;
                    let top = v00 + (v01 - v00) * fx;
                    let bottom = v10 + (v11 - v10) * fx;
                    data[(oy * width + ox) * CHANNELS + c] = clip((top + (bottom - top) * fy) as f32);
                }
            }
        }
        Image::new(height, width, data)
    }

    /// Mirror left-right. Involution: flipping twice restores the original.
    pub fn flip_horizontal(&self) -> Image {
        let mut data = vec![0.0f32; self.data.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                let src = (y * self.width + x) * CHANNELS;
                let dst = (y * self.width + (self.width - 1 - x)) * CHANNELS;
                data[dst..dst + 3].copy_from_slice(&self.data[src..src + 3]);
            }
        }
        Image {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Copy the `ch x cw` window with top-left corner `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, ch: usize, cw: usize) -> Result<Image> {
        if ch == 0 || cw == 0 || top + ch > self.height || left + cw > self.width {
            return Err(Error::InvalidGeometry(format!(
                "crop {ch}x{cw}+{top}+{left} exceeds image {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(ch * cw * CHANNELS);
        for y in top..top + ch {
            let start = (y * self.width + left) * CHANNELS;
            data.extend_from_slice(&self.data[start..start + cw * CHANNELS]);
        }
        Image::new(ch, cw, data)
    }
}

/// Pixel in the hexcone HSV model: hue in degrees `[0, 360)`, saturation
/// and value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HsvPixel {
    pub h: f32,
    pub s: f32,
    pub v: f32,
}

pub fn rgb_to_hsv(rgb: [f32; 3]) -> HsvPixel {
    let r = rgb[0] as f64;
    let g = rgb[1] as f64;
    let b = rgb[2] as f64;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * (((g - b) / delta).rem_euclid(6.0))
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max > 0.0 { delta / max } else { 0.0 };
    HsvPixel {
        h: wrap_degrees(h) as f32,
        s: s as f32,
        v: max as f32,
    }
}

pub fn hsv_to_rgb(p: HsvPixel) -> [f32; 3] {
    let h = wrap_degrees(p.h as f64);
    let s = (p.s as f64).clamp(0.0, 1.0);
    let v = (p.v as f64).clamp(0.0, 1.0);
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r1, g1, b1) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r1 + m) as f32, (g1 + m) as f32, (b1 + m) as f32]
}

fn wrap_degrees(h: f64) -> f64 {
    let w = h.rem_euclid(360.0);
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_clamps_and_is_idempotent() {
        assert_eq!(clip(1.1), 1.0);
        assert_eq!(clip(0.5), 0.5);
        assert_eq!(clip(-0.3), 0.0);
        for v in [-2.0f32, -0.1, 0.0, 0.3, 1.0, 7.5] {
            assert_eq!(clip(clip(v)), clip(v));
        }
    }

    #[test]
    fn hsv_known_points() {
        let red = rgb_to_hsv([1.0, 0.0, 0.0]);
        assert_eq!(red.h, 0.0);
        assert_eq!(red.s, 1.0);
        assert_eq!(red.v, 1.0);

        let gray = rgb_to_hsv([0.5, 0.5, 0.5]);
        assert_eq!(gray.h, 0.0);
        assert_eq!(gray.s, 0.0);
        assert_eq!(gray.v, 0.5);
    }

    #[test]
    fn hue_rotation_round_trip() {
        let mut p = rgb_to_hsv([0.0, 1.0, 0.0]);
        p.h = (p.h + 18.0).rem_euclid(360.0);
        p.h = (p.h - 18.0).rem_euclid(360.0);
        let rgb = hsv_to_rgb(p);
        for (got, want) in rgb.iter().zip([0.0, 1.0, 0.0]) {
            assert!((got - want).abs() < 1e-6, "{rgb:?}");
        }
    }

    #[test]
    fn hsv_round_trip_grid() {
        // 17^3 grid of RGB values, per-channel error < 1e-6.
        for ri in 0..17 {
            for gi in 0..17 {
                for bi in 0..17 {
                    let rgb = [ri as f32 / 16.0, gi as f32 / 16.0, bi as f32 / 16.0];
                    let back = hsv_to_rgb(rgb_to_hsv(rgb));
                    for c in 0..3 {
                        assert!(
                            (back[c] - rgb[c]).abs() < 1e-6,
                            "rgb {rgb:?} -> {back:?}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = Image::filled(3, 5, [0.25, 0.5, 0.75]).unwrap();
        let out = img.resize(7, 2).unwrap();
        for px in out.data().chunks(3) {
            assert!((px[0] - 0.25).abs() < 1e-6);
            assert!((px[1] - 0.5).abs() < 1e-6);
            assert!((px[2] - 0.75).abs() < 1e-6);
        }
    }

    #[test]
    fn resize_identity_is_exact() {
        let data: Vec<f32> = (0..4 * 3 * 3).map(|i| (i % 7) as f32 / 7.0).collect();
        let img = Image::new(4, 3, data.clone()).unwrap();
        let out = img.resize(4, 3).unwrap();
        assert_eq!(out.data(), img.data());
    }

    #[test]
    fn resize_checkerboard_average() {
        // 2x2 checkerboard {0,1} collapses to a single 0.5 pixel under
        // half-pixel center sampling.
        let data = vec![
            0.0, 0.0, 0.0, 1.0, 1.0, 1.0, //
            1.0, 1.0, 1.0, 0.0, 0.0, 0.0,
        ];
        let img = Image::new(2, 2, data).unwrap();
        let out = img.resize(1, 1).unwrap();
        for c in 0..3 {
            assert!((out.get(0, 0, c) - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn resize_rejects_zero_dimension() {
        let img = Image::filled(2, 2, [0.0; 3]).unwrap();
        assert!(img.resize(0, 2).is_err());
        assert!(img.resize(2, 0).is_err());
    }

    #[test]
    fn flip_is_involution() {
        let data: Vec<f32> = (0..2 * 3 * 3).map(|i| i as f32 / 18.0).collect();
        let img = Image::new(2, 3, data).unwrap();
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
    }

    #[test]
    fn geometry_invariants_enforced() {
        assert!(Image::new(0, 4, vec![]).is_err());
        assert!(Image::new(1, 1, vec![0.0; 2]).is_err());
        let img = Image::filled(4, 4, [0.1; 3]).unwrap();
        assert!(img.crop(2, 2, 3, 1).is_err());
        assert_eq!(img.crop(1, 1, 2, 2).unwrap().dims(), (2, 2));
    }
}
