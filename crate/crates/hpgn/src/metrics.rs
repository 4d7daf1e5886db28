//! Evaluation metrics and their report file.
//!
//! PSNR is computed on RGB jointly: one mean squared error over all three
//! channels, 10·log10(255²/MSE), with +inf as the sentinel for identical
//! images. SSIM is the standard single-scale form on BT.601 luminance with
//! an 11×11 Gaussian window (σ = 1.5), K1 = 0.01, K2 = 0.03, L = 255,
//! averaged over fully valid window positions.

use std::fmt::Write as _;

use image::RgbImage;

use crate::error::{Error, Result};

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

fn check_same_size(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.dimensions() != b.dimensions() {
        return Err(Error::Dim(format!(
            "image sizes differ: {:?} vs {:?}",
            a.dimensions(),
            b.dimensions()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over all RGB samples jointly.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_same_size(a, b)?;
    let mut sum_sq = 0.0f64;
    for (pa, pb) in a.pixels().zip(b.pixels()) {
        for c in 0..3 {
            let d = pa.0[c] as f64 - pb.0[c] as f64;
            sum_sq += d * d;
        }
    }
    let n = (a.width() as f64) * (a.height() as f64) * 3.0;
    let mse = sum_sq / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// Full-range BT.601 luminance plane in row-major order.
fn luminance(img: &RgbImage) -> Vec<f64> {
    img.pixels()
        .map(|p| 0.2990 * p.0[0] as f64 + 0.5870 * p.0[1] as f64 + 0.1140 * p.0[2] as f64)
        .collect()
}

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for r in 0..SSIM_WINDOW {
        for c in 0..SSIM_WINDOW {
            let dr = r as f64 - mid;
            let dc = c as f64 - mid;
            let v = (-(dr * dr + dc * dc) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[r * SSIM_WINDOW + c] = v;
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Mean structural similarity over valid window positions. Both moments of a
/// window come from one shared accumulation pass, so ssim(a, a) is exactly 1.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_same_size(a, b)?;
    let (w, h) = (a.width() as usize, a.height() as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Dim(format!(
            "structural similarity needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let ya = luminance(a);
    let yb = luminance(b);
    let win = gaussian_window();

    let mut total = 0.0f64;
    let mut count = 0usize;
    for y0 in 0..=(h - SSIM_WINDOW) {
        for x0 in 0..=(w - SSIM_WINDOW) {
            let mut mx = 0.0;
            let mut my = 0.0;
            let mut sxx = 0.0;
            let mut syy = 0.0;
            let mut sxy = 0.0;
            for r in 0..SSIM_WINDOW {
                let row = (y0 + r) * w + x0;
                for c in 0..SSIM_WINDOW {
                    let wv = win[r * SSIM_WINDOW + c];
                    let av = ya[row + c];
                    let bv = yb[row + c];
                    // Parenthesized so swapping the images commutes exactly.
                    mx += wv * av;
                    my += wv * bv;
                    sxx += wv * (av * av);
                    syy += wv * (bv * bv);
                    sxy += wv * (av * bv);
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cxy = sxy - mx * my;
            let num = (2.0 * (mx * my) + SSIM_C1) * (2.0 * cxy + SSIM_C2);
            let den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    pub path: String,
    pub qf: u8,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Per-image metrics plus run metadata, serialized as line-oriented text:
///
/// ```text
/// # metrics v1
/// # seed <decimal u64>
/// # config <16-digit lowercase hex u64>
/// # columns path qf psnr_db ssim
/// <path>\t<qf>\t<psnr_db>\t<ssim>
/// ...
/// # aggregate images <n> mean_psnr_db <v> mean_ssim <v>
/// ```
///
/// Floats use shortest round-trip formatting; infinite PSNR is written as
/// `inf`. Paths must not contain tabs or newlines.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub records: Vec<MetricRecord>,
    pub seed: u64,
    pub config_hash: u64,
}

impl MetricsReport {
    pub fn mean_psnr_db(&self) -> f64 {
        if self.records.is_empty() {
            return f64::NAN;
        }
        self.records.iter().map(|r| r.psnr_db).sum::<f64>() / self.records.len() as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        if self.records.is_empty() {
            return f64::NAN;
        }
        self.records.iter().map(|r| r.ssim).sum::<f64>() / self.records.len() as f64
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = String::new();
        out.push_str("# metrics v1\n");
        let _ = writeln!(out, "# seed {}", self.seed);
        let _ = writeln!(out, "# config {:016x}", self.config_hash);
        out.push_str("# columns path qf psnr_db ssim\n");
        for r in &self.records {
            if r.path.contains(['\t', '\n']) {
                return Err(Error::Config(format!(
                    "path {:?} contains tab or newline and cannot be recorded",
                    r.path
                )));
            }
            let _ = writeln!(out, "{}\t{}\t{}\t{}", r.path, r.qf, r.psnr_db, r.ssim);
        }
        let _ = writeln!(
            out,
            "# aggregate images {} mean_psnr_db {} mean_ssim {}",
            self.records.len(),
            self.mean_psnr_db(),
            self.mean_ssim()
        );
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: &str, why: &str| Error::Config(format!("bad metrics line {line:?}: {why}"));
        let mut seed = None;
        let mut config_hash = None;
        let mut records = Vec::new();
        let mut saw_header = false;
        for line in text.lines() {
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("# ") {
                if rest == "metrics v1" {
                    saw_header = true;
                } else if let Some(v) = rest.strip_prefix("seed ") {
                    seed = Some(v.parse().map_err(|_| bad(line, "seed is not a u64"))?);
                } else if let Some(v) = rest.strip_prefix("config ") {
                    config_hash =
                        Some(u64::from_str_radix(v, 16).map_err(|_| bad(line, "config is not hex"))?);
                }
                // columns / aggregate lines are documentation, not state
                continue;
            }
            let mut fields = line.split('\t');
            let path = fields.next().ok_or_else(|| bad(line, "missing path"))?;
            let qf = fields
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(line, "missing or invalid qf"))?;
            let psnr_db = fields
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(line, "missing or invalid psnr"))?;
            let ssim = fields
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(line, "missing or invalid ssim"))?;
            if fields.next().is_some() {
                return Err(bad(line, "too many fields"));
            }
            records.push(MetricRecord { path: path.to_string(), qf, psnr_db, ssim });
        }
        if !saw_header {
            return Err(Error::Config("metrics text lacks the `# metrics v1` header".into()));
        }
        Ok(MetricsReport {
            records,
            seed: seed.ok_or_else(|| Error::Config("metrics text lacks a seed line".into()))?,
            config_hash: config_hash
                .ok_or_else(|| Error::Config("metrics text lacks a config line".into()))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::busy_image;

    fn shifted(img: &RgbImage, delta: i16) -> RgbImage {
        let mut out = img.clone();
        for p in out.pixels_mut() {
            for c in 0..3 {
                p.0[c] = (p.0[c] as i16 + delta).clamp(0, 255) as u8;
            }
        }
        out
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let img = busy_image(24, 24, 1);
        assert_eq!(psnr(&img, &img).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_uniform_one_level_matches_closed_form() {
        let img = busy_image(32, 32, 2);
        // Keep every sample in 1..=254 so the +1 shift is exact.
        let mut base = img.clone();
        for p in base.pixels_mut() {
            for c in 0..3 {
                p.0[c] = p.0[c].clamp(1, 254);
            }
        }
        let up = shifted(&base, 1);
        let v = psnr(&base, &up).unwrap();
        assert!((v - 48.130_803_608_679_1).abs() <= 1e-9, "got {v}");
    }

    #[test]
    fn psnr_matches_loop_oracle_and_is_symmetric() {
        let a = busy_image(20, 28, 3);
        let b = busy_image(28, 20, 4); // different content once rotated sizes differ
        let b = RgbImage::from_fn(20, 28, |x, y| *b.get_pixel(y % 28, x % 20));
        let mut sum = 0.0;
        for (pa, pb) in a.pixels().zip(b.pixels()) {
            for c in 0..3 {
                let d = pa.0[c] as f64 - pb.0[c] as f64;
                sum += d * d;
            }
        }
        let mse = sum / (20.0 * 28.0 * 3.0);
        let expected = 10.0 * (255.0f64 * 255.0 / mse).log10();
        assert!((psnr(&a, &b).unwrap() - expected).abs() <= 1e-9);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn psnr_decreases_with_noise_amplitude() {
        let img = busy_image(32, 32, 2);
        let mut prev = f64::INFINITY;
        for amp in [1i16, 2, 4, 8] {
            // Deterministic +/- amp pattern.
            let mut noisy = img.clone();
            for (i, p) in noisy.pixels_mut().enumerate() {
                let s = if i % 2 == 0 { amp } else { -amp };
                for c in 0..3 {
                    p.0[c] = (p.0[c] as i16 + s).clamp(0, 255) as u8;
                }
            }
            let v = psnr(&img, &noisy).unwrap();
            assert!(v < prev, "amplitude {amp} gave {v}, previous {prev}");
            prev = v;
        }
    }

    #[test]
    fn psnr_rejects_size_mismatch() {
        let a = busy_image(16, 16, 5);
        let b = busy_image(16, 17, 6);
        assert!(psnr(&a, &b).is_err());
    }

    #[test]
    fn ssim_identical_is_exactly_one() {
        let img = busy_image(24, 24, 1);
        assert_eq!(ssim(&img, &img).unwrap(), 1.0);
    }

    #[test]
    fn ssim_negation_is_below_one_and_symmetric() {
        let img = busy_image(24, 24, 1);
        let mut neg = img.clone();
        for p in neg.pixels_mut() {
            for c in 0..3 {
                p.0[c] = 255 - p.0[c];
            }
        }
        let v = ssim(&img, &neg).unwrap();
        assert!(v < 1.0);
        assert!((-1.0..=1.0).contains(&v));
        assert_eq!(v, ssim(&neg, &img).unwrap());
    }

    #[test]
    fn ssim_rejects_undersized_input() {
        let a = busy_image(10, 24, 7);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn ssim_matches_direct_definition_recoding() {
        let a = busy_image(20, 20, 8);
        let b = shifted(&busy_image(20, 20, 8), 9);
        let b = {
            // perturb structure, not just brightness
            let mut m = b;
            for (i, p) in m.pixels_mut().enumerate() {
                p.0[i % 3] = p.0[i % 3].wrapping_add((i % 17) as u8);
            }
            m
        };

        // Independent implementation: centered moments, window regenerated
        // from the definition.
        let (w, h) = (20usize, 20usize);
        let ya = luminance(&a);
        let yb = luminance(&b);
        let mut win = vec![0.0f64; 121];
        let mut wsum = 0.0;
        for r in 0..11 {
            for c in 0..11 {
                let dr = r as f64 - 5.0;
                let dc = c as f64 - 5.0;
                let v = f64::exp(-(dr * dr + dc * dc) / 4.5);
                win[r * 11 + c] = v;
                wsum += v;
            }
        }
        let mut total = 0.0;
        let mut count = 0;
        for y0 in 0..=(h - 11) {
            for x0 in 0..=(w - 11) {
                let mut mx = 0.0;
                let mut my = 0.0;
                for r in 0..11 {
                    for c in 0..11 {
                        let wv = win[r * 11 + c] / wsum;
                        mx += wv * ya[(y0 + r) * w + x0 + c];
                        my += wv * yb[(y0 + r) * w + x0 + c];
                    }
                }
                let mut vx = 0.0;
                let mut vy = 0.0;
                let mut cxy = 0.0;
                for r in 0..11 {
                    for c in 0..11 {
                        let wv = win[r * 11 + c] / wsum;
                        let da = ya[(y0 + r) * w + x0 + c] - mx;
                        let db = yb[(y0 + r) * w + x0 + c] - my;
                        vx += wv * da * da;
                        vy += wv * db * db;
                        cxy += wv * da * db;
                    }
                }
                let num = (2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2);
                let den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2);
                total += num / den;
                count += 1;
            }
        }
        let expected = total / count as f64;
        let got = ssim(&a, &b).unwrap();
        assert!((got - expected).abs() <= 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn report_round_trips_through_text() {
        let report = MetricsReport {
            records: vec![
                MetricRecord { path: "low/a.png".into(), qf: 80, psnr_db: 31.25, ssim: 0.912345 },
                MetricRecord {
                    path: "low/b.png".into(),
                    qf: 10,
                    psnr_db: f64::INFINITY,
                    ssim: 1.0,
                },
            ],
            seed: 42,
            config_hash: 0xdead_beef_0123_4567,
        };
        let text = report.to_text().unwrap();
        let parsed = MetricsReport::from_text(&text).unwrap();
        assert_eq!(parsed, report);
        assert!(text.contains("inf"));
    }

    #[test]
    fn report_rejects_malformed_text() {
        assert!(MetricsReport::from_text("# seed 1\n# config 00ff\n").is_err());
        let no_seed = "# metrics v1\n# config 00ff\n";
        assert!(MetricsReport::from_text(no_seed).is_err());
        let bad_row = "# metrics v1\n# seed 1\n# config 00ff\npath\tnotanumber\t1\t1\n";
        assert!(MetricsReport::from_text(bad_row).is_err());
        let tab_path = MetricsReport {
            records: vec![MetricRecord { path: "a\tb".into(), qf: 1, psnr_db: 1.0, ssim: 1.0 }],
            seed: 0,
            config_hash: 0,
        };
        assert!(tab_path.to_text().is_err());
    }

    #[test]
    fn aggregates_are_plain_means() {
        let report = MetricsReport {
            records: vec![
                MetricRecord { path: "a".into(), qf: 1, psnr_db: 30.0, ssim: 0.8 },
                MetricRecord { path: "b".into(), qf: 2, psnr_db: 34.0, ssim: 0.9 },
            ],
            seed: 0,
            config_hash: 0,
        };
        assert_eq!(report.mean_psnr_db(), 32.0);
        assert!((report.mean_ssim() - 0.85).abs() <= 1e-15);
    }
}
