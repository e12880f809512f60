use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::Image;

pub fn random_image(seed: u64, h: usize, w: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..h * w * 3).map(|_| rng.random::<f32>()).collect();
    Image::new(h, w, data).unwrap()
}

/// Random image with values in a band that keeps headroom before clipping.
pub fn random_midrange_image(seed: u64, h: usize, w: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..h * w * 3)
        .map(|_| rng.random_range(0.25f32..0.75))
        .collect();
    Image::new(h, w, data).unwrap()
}
