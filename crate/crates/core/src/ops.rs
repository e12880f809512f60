//! Finite catalogs of image-editing operations and their application.
//!
//! Catalog ordering is fixed so policy indices and sequence files stay
//! stable: families appear in the order brightness, contrast, gamma,
//! saturation, hue, white balance, spatial filters, stop. Parametric
//! families enumerate parameters in ascending order, each crossed with the
//! channel modes `all, r, g, b`; `stop` is always the last id.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter;
use crate::image::{clip, hsv_to_rgb, rgb_to_hsv, Image, CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Brightness,
    Contrast,
    Gamma,
    Saturation,
    Hue,
    GrayWorld,
    MaxRgb,
    Median,
    GaussianBlur,
    Sharpen,
    EdgeEnhance,
    Detail,
    Smooth,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMask {
    All,
    R,
    G,
    B,
}

impl ChannelMask {
    fn selects(&self, c: usize) -> bool {
        match self {
            ChannelMask::All => true,
            ChannelMask::R => c == 0,
            ChannelMask::G => c == 1,
            ChannelMask::B => c == 2,
        }
    }
}

/// One entry of a catalog. `id` is dense in `[0, |A|)` within its catalog.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Operation {
    pub id: u16,
    pub family: Family,
    pub channel: ChannelMask,
    pub param: f32,
    pub terminal: bool,
}

/// Ordered, finite action set. The terminal `stop` appears exactly once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub name: String,
    pub ops: Vec<Operation>,
}

impl Catalog {
    /// Catalog by name: `lol` (37 operations) or `fivek` (29 operations).
    pub fn named(name: &str) -> Result<Catalog> {
        match name {
            "lol" => Ok(Self::lol()),
            "fivek" => Ok(Self::fivek()),
            other => Err(Error::UnknownCatalog(other.to_string())),
        }
    }

    /// Low-light set: global tone operators on all/single channels, white
    /// balance, six spatial filters and stop.
    pub fn lol() -> Catalog {
        let mut b = CatalogBuilder::new("lol");
        b.per_channel(Family::Brightness, &[-0.1, 0.1]);
        b.per_channel(Family::Contrast, &[0.8, 2.0]);
        b.per_channel(Family::Gamma, &[0.6, 1.1]);
        b.global(Family::Saturation, &[0.5, 2.0]);
        b.global(Family::Hue, &[-18.0, 18.0]);
        b.single(Family::GrayWorld, 0.0);
        b.single(Family::MaxRgb, 0.0);
        b.single(Family::Median, 3.0);
        b.single(Family::GaussianBlur, 2.0);
        b.single(Family::Sharpen, 0.0);
        b.single(Family::EdgeEnhance, 0.0);
        b.single(Family::Detail, 0.0);
        b.single(Family::Smooth, 0.0);
        b.finish()
    }

    /// Color-curve set: fine-grained tone operators only, plus stop.
    pub fn fivek() -> Catalog {
        let mut b = CatalogBuilder::new("fivek");
        b.per_channel(Family::Brightness, &[-0.05, 0.05]);
        b.per_channel(Family::Contrast, &[0.894, 1.414]);
        b.per_channel(Family::Gamma, &[0.775, 1.05]);
        b.global(Family::Saturation, &[0.707, 1.414]);
        b.global(Family::Hue, &[-9.0, 9.0]);
        b.finish()
    }

    /// Build a custom catalog from non-terminal entries; ids are reassigned
    /// densely and a stop operation is appended.
    pub fn custom(name: &str, entries: Vec<(Family, ChannelMask, f32)>) -> Catalog {
        let mut ops: Vec<Operation> = entries
            .into_iter()
            .enumerate()
            .map(|(id, (family, channel, param))| Operation {
                id: id as u16,
                family,
                channel,
                param,
                terminal: false,
            })
            .collect();
        ops.push(Operation {
            id: ops.len() as u16,
            family: Family::Stop,
            channel: ChannelMask::All,
            param: 0.0,
            terminal: true,
        });
        Catalog {
            name: name.to_string(),
            ops,
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn stop_id(&self) -> u16 {
        self.ops
            .iter()
            .find(|o| o.terminal)
            .map(|o| o.id)
            .expect("catalog contains a stop operation")
    }

    pub fn get(&self, id: u16) -> Result<&Operation> {
        self.ops
            .get(id as usize)
            .ok_or_else(|| Error::UnknownOperation {
                id,
                catalog: self.name.clone(),
            })
    }

    /// Serialize as a JSON array of `{id, family, channel, param, terminal}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.ops).expect("catalog serializes")
    }

    pub fn from_json(name: &str, json: &str) -> Result<Catalog> {
        let ops: Vec<Operation> = serde_json::from_str(json)
            .map_err(|e| Error::Config(format!("catalog json: {e}")))?;
        let catalog = Catalog {
            name: name.to_string(),
            ops,
        };
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn validate(&self) -> Result<()> {
        let mut stops = 0;
        for (i, op) in self.ops.iter().enumerate() {
            if op.id as usize != i {
                return Err(Error::Config(format!(
                    "catalog `{}`: id {} at position {i} is not dense",
                    self.name, op.id
                )));
            }
            if op.terminal != (op.family == Family::Stop) {
                return Err(Error::Config(format!(
                    "catalog `{}`: terminal flag must mark exactly the stop family",
                    self.name
                )));
            }
            if op.terminal {
                stops += 1;
            }
        }
        if stops != 1 {
            return Err(Error::Config(format!(
                "catalog `{}` must contain exactly one stop, found {stops}",
                self.name
            )));
        }
        Ok(())
    }
}

struct CatalogBuilder {
    name: &'static str,
    ops: Vec<Operation>,
}

impl CatalogBuilder {
    fn new(name: &'static str) -> Self {
        CatalogBuilder { name, ops: vec![] }
    }

    fn push(&mut self, family: Family, channel: ChannelMask, param: f32) {
        self.ops.push(Operation {
            id: self.ops.len() as u16,
            family,
            channel,
            param,
            terminal: family == Family::Stop,
        });
    }

    fn per_channel(&mut self, family: Family, params: &[f32]) {
        for &p in params {
            for ch in [ChannelMask::All, ChannelMask::R, ChannelMask::G, ChannelMask::B] {
                self.push(family, ch, p);
            }
        }
    }

    fn global(&mut self, family: Family, params: &[f32]) {
        for &p in params {
            self.push(family, ChannelMask::All, p);
        }
    }

    fn single(&mut self, family: Family, param: f32) {
        self.push(family, ChannelMask::All, param);
    }

    fn finish(mut self) -> Catalog {
        self.push(Family::Stop, ChannelMask::All, 0.0);
        let catalog = Catalog {
            name: self.name.to_string(),
            ops: self.ops,
        };
        debug_assert!(catalog.validate().is_ok());
        catalog
    }
}

/// Apply a non-terminal operation, returning a new image; the input is
/// never mutated and the output lies in `[0, 1]`.
pub fn apply(op: &Operation, img: &Image) -> Result<Image> {
    match op.family {
        Family::Stop => Err(Error::StopNotApplicable),
        Family::Brightness => Ok(map_masked(img, op.channel, |v, _| v + op.param)),
        Family::Contrast => {
            let means = channel_means(img);
            Ok(map_masked(img, op.channel, |v, c| {
                means[c] + op.param * (v - means[c])
            }))
        }
        Family::Gamma => Ok(map_masked(img, op.channel, |v, _| {
            v.max(0.0).powf(op.param)
        })),
        Family::Saturation => Ok(map_hsv(img, |hsv| {
            hsv.s = (hsv.s * op.param).clamp(0.0, 1.0);
        })),
        Family::Hue => Ok(map_hsv(img, |hsv| {
            hsv.h = (hsv.h + op.param).rem_euclid(360.0);
        })),
        Family::GrayWorld => Ok(gray_world(img)),
        Family::MaxRgb => Ok(max_rgb(img)),
        Family::Median => Ok(filter::median3x3(img)),
        Family::GaussianBlur => filter::gaussian_blur(img, op.param),
        Family::Sharpen => Ok(filter::convolve3x3(img, &filter::SHARPEN)),
        Family::EdgeEnhance => Ok(filter::convolve3x3(img, &filter::EDGE_ENHANCE)),
        Family::Detail => Ok(filter::convolve3x3(img, &filter::DETAIL)),
        Family::Smooth => Ok(filter::convolve3x3(img, &filter::SMOOTH)),
    }
}

/// Apply a whole sequence of catalog ids in order.
pub fn apply_sequence(catalog: &Catalog, ids: &[u16], img: &Image) -> Result<Image> {
    let mut current = img.clone();
    for &id in ids {
        current = apply(catalog.get(id)?, &current)?;
    }
    Ok(current)
}

fn map_masked(img: &Image, mask: ChannelMask, f: impl Fn(f32, usize) -> f32) -> Image {
    let mut out = img.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let c = i % CHANNELS;
        if mask.selects(c) {
            *v = clip(f(*v, c));
        }
    }
    out
}

fn map_hsv(img: &Image, f: impl Fn(&mut crate::image::HsvPixel)) -> Image {
    let mut out = img.clone();
    for px in out.data_mut().chunks_mut(CHANNELS) {
        let mut hsv = rgb_to_hsv([px[0], px[1], px[2]]);
        f(&mut hsv);
        let rgb = hsv_to_rgb(hsv);
        for (dst, v) in px.iter_mut().zip(rgb) {
            *dst = clip(v);
        }
    }
    out
}

/// Per-channel mean intensity, accumulated in f64.
pub fn channel_means(img: &Image) -> [f32; 3] {
    let mut sums = [0.0f64; 3];
    for px in img.data().chunks(CHANNELS) {
        for c in 0..CHANNELS {
            sums[c] += px[c] as f64;
        }
    }
    let n = (img.height() * img.width()) as f64;
    [
        (sums[0] / n) as f32,
        (sums[1] / n) as f32,
        (sums[2] / n) as f32,
    ]
}

/// Gray-world white balance: scale each channel by `mean-of-means / mean`;
/// channels with mean below 1e-6 are left unchanged.
fn gray_world(img: &Image) -> Image {
    let means = channel_means(img);
    let grand = (means[0] + means[1] + means[2]) / 3.0;
    let mut gains = [1.0f32; 3];
    for c in 0..CHANNELS {
        if means[c] >= 1e-6 {
            gains[c] = grand / means[c];
        }
    }
    map_masked(img, ChannelMask::All, |v, c| v * gains[c])
}

/// Max-RGB white balance: divide each channel by its maximum; channels with
/// maximum below 1e-6 are left unchanged.
fn max_rgb(img: &Image) -> Image {
    let mut maxes = [0.0f32; 3];
    for px in img.data().chunks(CHANNELS) {
        for c in 0..CHANNELS {
            maxes[c] = maxes[c].max(px[c]);
        }
    }
    let mut gains = [1.0f32; 3];
    for c in 0..CHANNELS {
        if maxes[c] >= 1e-6 {
            gains[c] = 1.0 / maxes[c];
        }
    }
    map_masked(img, ChannelMask::All, |v, c| v * gains[c])
}


#[cfg(test)]
mod props {
    use proptest::prelude::*;

    use super::*;
    use crate::testutil::random_image;

    proptest! {
        #[test]
        fn any_operator_keeps_values_in_unit_range_and_never_mutates(
            seed in any::<u64>(),
            h in 1usize..8,
            w in 1usize..8,
            op_idx in 0usize..36,
        ) {
            let catalog = Catalog::lol();
            let img = random_image(seed, h, w);
            let before = img.clone();
            let op = &catalog.ops[op_idx];
            prop_assume!(!op.terminal);
            let out = apply(op, &img).unwrap();
            prop_assert_eq!(img, before);
            prop_assert_eq!(out.dims(), (h, w));
            for &v in out.data() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn hsv_round_trip_on_random_pixels(r in 0.0f32..=1.0, g in 0.0f32..=1.0, b in 0.0f32..=1.0) {
            let back = crate::image::hsv_to_rgb(crate::image::rgb_to_hsv([r, g, b]));
            for c in 0..3 {
                prop_assert!((back[c] - [r, g, b][c]).abs() < 1e-6);
            }
        }
    }
}
