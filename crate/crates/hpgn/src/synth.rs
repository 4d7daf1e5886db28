//! Deterministic synthetic corpora for tests and desk-scale runs.
//!
//! Real benchmark datasets are large externally licensed downloads, so the
//! repository ships generators instead: structured scenes (gradients, soft
//! shapes, texture) that compress like photographs, and paired low/high
//! variants where the low image is a dimmed, lightly noised copy of the
//! high one. Everything is a pure function of the seed.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::img::save_png_atomic;

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// A structured scene: two-color gradient base, a few soft-edged ellipses
/// and rectangles, diagonal stripes, and mild hash noise.
pub fn scene(size: u32, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c0: [f64; 3] = [rng.gen_range(60.0..220.0), rng.gen_range(60.0..220.0), rng.gen_range(60.0..220.0)];
    let c1: [f64; 3] = [rng.gen_range(60.0..220.0), rng.gen_range(60.0..220.0), rng.gen_range(60.0..220.0)];
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let (ca, sa) = (angle.cos(), angle.sin());

    struct Blob {
        cx: f64,
        cy: f64,
        rx: f64,
        ry: f64,
        color: [f64; 3],
        rect: bool,
    }
    let blobs: Vec<Blob> = (0..rng.gen_range(3..6))
        .map(|_| Blob {
            cx: rng.gen_range(0.0..1.0),
            cy: rng.gen_range(0.0..1.0),
            rx: rng.gen_range(0.08..0.3),
            ry: rng.gen_range(0.08..0.3),
            color: [
                rng.gen_range(30.0..250.0),
                rng.gen_range(30.0..250.0),
                rng.gen_range(30.0..250.0),
            ],
            rect: rng.gen(),
        })
        .collect();
    let stripe_freq: f64 = rng.gen_range(6.0..18.0);
    let stripe_amp: f64 = rng.gen_range(4.0..14.0);
    let noise_seed: u64 = rng.gen();

    RgbImage::from_fn(size, size, |x, y| {
        let u = x as f64 / size as f64;
        let v = y as f64 / size as f64;
        let t = ((u - 0.5) * ca + (v - 0.5) * sa + 0.5).clamp(0.0, 1.0);
        let mut px = [lerp(c0[0], c1[0], t), lerp(c0[1], c1[1], t), lerp(c0[2], c1[2], t)];
        for b in &blobs {
            let du = (u - b.cx) / b.rx;
            let dv = (v - b.cy) / b.ry;
            let d = if b.rect { du.abs().max(dv.abs()) } else { (du * du + dv * dv).sqrt() };
            // soft edge over ~10% of the radius
            let cover = ((1.1 - d) / 0.2).clamp(0.0, 1.0);
            for c in 0..3 {
                px[c] = lerp(px[c], b.color[c], cover);
            }
        }
        let stripes = (std::f64::consts::TAU * stripe_freq * (u + v)).sin() * stripe_amp;
        let mut h = noise_seed ^ (u64::from(x) << 32 | u64::from(y));
        h = h.wrapping_mul(0x9e3779b97f4a7c15);
        h ^= h >> 29;
        let noise = (h & 0x7) as f64 - 3.5;
        Rgb([0, 1, 2].map(|c| (px[c] + stripes + noise).round().clamp(0.0, 255.0) as u8))
    })
}

/// Fixed 10-image corpus for compression-distortion measurements.
pub fn distortion_corpus(size: u32) -> Vec<RgbImage> {
    (0..10).map(|i| scene(size, 0xd15_7000 + i)).collect()
}

pub struct DeskPair {
    pub name: String,
    pub low: RgbImage,
    pub high: RgbImage,
}

/// Paired corpus: `high` is a scene, `low` is the same scene dimmed by a
/// per-pair factor in [0.12, 0.3] with slight sensor-style noise.
pub fn desk_pairs(count: usize, size: u32, seed: u64) -> Vec<DeskPair> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x517c_c1b7_2722_0a95));
            let high = scene(size, rng.gen());
            let factor: f64 = rng.gen_range(0.12..0.3);
            let noise_seed: u64 = rng.gen();
            let low = RgbImage::from_fn(size, size, |x, y| {
                let p = high.get_pixel(x, y);
                let mut h = noise_seed ^ (u64::from(x) << 32 | u64::from(y));
                h = h.wrapping_mul(0x2545f4914f6cdd1d);
                h ^= h >> 31;
                let noise = (h & 0x3) as f64 - 1.5;
                Rgb([0, 1, 2].map(|c| {
                    (p.0[c] as f64 * factor + noise).round().clamp(0.0, 255.0) as u8
                }))
            });
            DeskPair { name: format!("pair{i:03}.png"), low, high }
        })
        .collect()
}

/// Write pairs as `<dir>/low/<name>` and `<dir>/high/<name>`.
pub fn write_pairs(dir: &Path, pairs: &[DeskPair]) -> Result<()> {
    fs::create_dir_all(dir.join("low"))?;
    fs::create_dir_all(dir.join("high"))?;
    for pair in pairs {
        save_png_atomic(&pair.low, &dir.join("low").join(&pair.name))?;
        save_png_atomic(&pair.high, &dir.join("high").join(&pair.name))?;
    }
    Ok(())
}
