//! Shared helpers for unit tests.

use image::RgbImage;

/// Deterministic busy test image: gradients, blocks, and hash noise.
pub(crate) fn busy_image(w: u32, h: u32, seed: u64) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        let mut s = seed
            .wrapping_mul(0x9e3779b97f4a7c15)
            .wrapping_add(u64::from(y) << 20 | u64::from(x));
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let noise = (s >> 58) as u8;
        let r = ((x * 2) % 256) as u8 ^ (noise & 0x1f);
        let g = ((y * 3) % 256) as u8;
        let b: u8 = if (x / 16 + y / 16) % 2 == 0 { 200 } else { 40 };
        image::Rgb([r, g, b.wrapping_add(noise >> 3)])
    })
}
