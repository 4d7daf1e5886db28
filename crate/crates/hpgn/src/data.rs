//! Paired dataset ingestion and training example construction.
//!
//! Examples are built with a documented RNG draw order — quality factor,
//! crop x, crop y, then the optional flip coin — so a seed fully determines
//! the example stream and tests can pin byte-exact expectations.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{imageops, RgbImage};
use rand::Rng;

use crate::config::QfMode;
use crate::error::{Error, Result};
use crate::img::load_png;
use crate::jpeg::{compress_roundtrip, qf_to_qm, ChannelKind, QualityFactor, QuantizationMatrix};

#[derive(Debug)]
pub struct ImagePair {
    pub name: String,
    pub low_path: PathBuf,
    pub high_path: PathBuf,
    pub low: RgbImage,
    pub high: RgbImage,
}

fn png_names(dir: &Path) -> Result<BTreeSet<String>> {
    let mut names = BTreeSet::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if name.to_ascii_lowercase().ends_with(".png") {
            names.insert(name.to_string());
        }
    }
    Ok(names)
}

/// Load `<root>/low/*.png` and `<root>/high/*.png` as filename-matched
/// pairs, sorted by name. Unmatched files or dimension mismatches abort
/// with a diagnostic listing every offender.
pub fn ingest(root: &Path) -> Result<Vec<ImagePair>> {
    let low_dir = root.join("low");
    let high_dir = root.join("high");
    for dir in [&low_dir, &high_dir] {
        if !dir.is_dir() {
            return Err(Error::Ingest(format!("{} is not a directory", dir.display())));
        }
    }
    let low_names = png_names(&low_dir)?;
    let high_names = png_names(&high_dir)?;

    let mut complaints = String::new();
    for name in low_names.difference(&high_names) {
        let _ = writeln!(complaints, "low/{name} has no matching high/{name}");
    }
    for name in high_names.difference(&low_names) {
        let _ = writeln!(complaints, "high/{name} has no matching low/{name}");
    }
    if !complaints.is_empty() {
        return Err(Error::Ingest(format!("unmatched files:\n{complaints}")));
    }
    if low_names.is_empty() {
        return Err(Error::Ingest(format!(
            "no PNG pairs found under {}",
            root.display()
        )));
    }

    let mut pairs = Vec::with_capacity(low_names.len());
    let mut size_complaints = String::new();
    for name in &low_names {
        let low_path = low_dir.join(name);
        let high_path = high_dir.join(name);
        let low = load_png(&low_path)?;
        let high = load_png(&high_path)?;
        if low.dimensions() != high.dimensions() {
            let _ = writeln!(
                size_complaints,
                "{name}: low is {:?}, high is {:?}",
                low.dimensions(),
                high.dimensions()
            );
            continue;
        }
        pairs.push(ImagePair { name: name.clone(), low_path, high_path, low, high });
    }
    if !size_complaints.is_empty() {
        return Err(Error::Ingest(format!(
            "dimension mismatches:\n{size_complaints}"
        )));
    }
    Ok(pairs)
}

/// One RNG draw in random mode, none in fixed mode.
pub fn sample_qf(rng: &mut impl Rng, mode: QfMode) -> QualityFactor {
    match mode {
        QfMode::Fixed(qf) => qf,
        QfMode::Random(lo, hi) => {
            let q = rng.gen_range(i64::from(lo)..=i64::from(hi));
            QualityFactor::new(q).expect("range is validated at config parse")
        }
    }
}

#[derive(Debug)]
pub struct Example {
    pub i_comp: RgbImage,
    pub i_high: RgbImage,
    pub qf: QualityFactor,
    pub qm: QuantizationMatrix,
}

/// Draw order: qf, crop x, crop y, then (only when `flip` is enabled) the
/// flip coin. The low image is compressed at full size first so block
/// boundaries land where a real decoded file would put them, then both
/// images are cropped at the same offsets.
pub fn make_example(
    pair: &ImagePair,
    rng: &mut impl Rng,
    crop: usize,
    qf_mode: QfMode,
    flip: bool,
) -> Result<Example> {
    let (w, h) = pair.low.dimensions();
    let crop_u32 = u32::try_from(crop).map_err(|_| Error::Config("crop overflows u32".into()))?;
    if crop_u32 > w || crop_u32 > h {
        return Err(Error::Config(format!(
            "crop {crop} exceeds {}x{} image {:?}; choose a smaller crop",
            w, h, pair.name
        )));
    }
    let qf = sample_qf(rng, qf_mode);
    let comp = compress_roundtrip(&pair.low, qf)?;
    let x0 = rng.gen_range(0..=(w - crop_u32));
    let y0 = rng.gen_range(0..=(h - crop_u32));
    let mut i_comp = imageops::crop_imm(&comp, x0, y0, crop_u32, crop_u32).to_image();
    let mut i_high = imageops::crop_imm(&pair.high, x0, y0, crop_u32, crop_u32).to_image();
    if flip && rng.gen::<bool>() {
        i_comp = imageops::flip_horizontal(&i_comp);
        i_high = imageops::flip_horizontal(&i_high);
    }
    Ok(Example { i_comp, i_high, qf, qm: qf_to_qm(qf, ChannelKind::Luma) })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::metrics::psnr;
    use crate::synth;

    fn qf(v: i64) -> QualityFactor {
        QualityFactor::new(v).unwrap()
    }

    fn corpus_dir(count: usize, size: u32, seed: u64) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        synth::write_pairs(dir.path(), &synth::desk_pairs(count, size, seed)).unwrap();
        dir
    }

    #[test]
    fn ingest_returns_sorted_matched_pairs() {
        let dir = corpus_dir(3, 32, 1);
        let pairs = ingest(dir.path()).unwrap();
        assert_eq!(pairs.len(), 3);
        let names: Vec<&str> = pairs.iter().map(|p| p.name.as_str()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
    }

    #[test]
    fn ingest_names_unmatched_files() {
        let dir = corpus_dir(2, 32, 2);
        std::fs::copy(
            dir.path().join("low/pair000.png"),
            dir.path().join("low/extra.png"),
        )
        .unwrap();
        let err = ingest(dir.path()).unwrap_err();
        assert!(err.to_string().contains("extra.png"), "{err}");
    }

    #[test]
    fn ingest_reports_dimension_mismatch_per_file() {
        let dir = corpus_dir(2, 32, 3);
        let small = synth::scene(16, 9);
        crate::img::save_png_atomic(&small, &dir.path().join("high/pair001.png")).unwrap();
        let err = ingest(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("pair001.png") && msg.contains("16"), "{msg}");
    }

    #[test]
    fn ingest_rejects_empty_and_missing_dirs() {
        let dir = tempfile::tempdir().unwrap();
        assert!(ingest(dir.path()).is_err());
        std::fs::create_dir_all(dir.path().join("low")).unwrap();
        std::fs::create_dir_all(dir.path().join("high")).unwrap();
        assert!(ingest(dir.path()).is_err());
    }

    #[test]
    fn sample_qf_fixed_and_degenerate_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            assert_eq!(sample_qf(&mut rng, QfMode::Fixed(qf(80))), qf(80));
            assert_eq!(sample_qf(&mut rng, QfMode::Random(10, 10)), qf(10));
        }
    }

    #[test]
    fn sample_qf_covers_the_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..1000 {
            seen.insert(sample_qf(&mut rng, QfMode::Random(10, 90)).get());
        }
        assert!(seen.len() >= 60, "only {} distinct values", seen.len());
        assert!(seen.iter().all(|&q| (10..=90).contains(&q)));
    }

    #[test]
    fn examples_are_seed_deterministic() {
        let dir = corpus_dir(1, 48, 6);
        let pairs = ingest(dir.path()).unwrap();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let e = make_example(&pairs[0], &mut rng, 32, QfMode::Random(10, 90), true).unwrap();
            (e.i_comp.as_raw().clone(), e.i_high.as_raw().clone(), e.qf.get())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn crops_are_pixel_aligned() {
        let dir = corpus_dir(1, 48, 8);
        let pairs = ingest(dir.path()).unwrap();
        // Fixed QF keeps the qf draw out of the offset sequence; replaying
        // the same rng reproduces the offsets for a direct crop check.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let e = make_example(&pairs[0], &mut rng, 16, QfMode::Fixed(qf(90)), false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x0 = rng.gen_range(0..=(48 - 16u32));
        let y0 = rng.gen_range(0..=(48 - 16u32));
        let direct = imageops::crop_imm(&pairs[0].high, x0, y0, 16, 16).to_image();
        assert_eq!(e.i_high.as_raw(), direct.as_raw());
    }

    #[test]
    fn qf_100_example_stays_near_the_plain_crop() {
        let dir = corpus_dir(1, 48, 10);
        let pairs = ingest(dir.path()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let e = make_example(&pairs[0], &mut rng, 32, QfMode::Fixed(qf(100)), false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x0 = rng.gen_range(0..=(48 - 32u32));
        let y0 = rng.gen_range(0..=(48 - 32u32));
        let plain = imageops::crop_imm(&pairs[0].low, x0, y0, 32, 32).to_image();
        let v = psnr(&plain, &e.i_comp).unwrap();
        assert!(v >= 40.0, "QF 100 crop only {v} dB from the plain crop");
    }

    #[test]
    fn oversized_crop_is_rejected_with_advice() {
        let dir = corpus_dir(1, 32, 12);
        let pairs = ingest(dir.path()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let err = make_example(&pairs[0], &mut rng, 64, QfMode::Fixed(qf(50)), false).unwrap_err();
        assert!(err.to_string().contains("smaller crop"), "{err}");
    }

    #[test]
    fn qm_is_the_luma_table_for_the_drawn_qf() {
        let dir = corpus_dir(1, 32, 14);
        let pairs = ingest(dir.path()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let e = make_example(&pairs[0], &mut rng, 16, QfMode::Fixed(qf(35)), false).unwrap();
        assert_eq!(e.qm.entries(), qf_to_qm(qf(35), ChannelKind::Luma).entries());
    }
}
