//! PNG input/output and conversion between 8-bit images and network tensors.
//!
//! Tensors use planar N×3×H×W layout with values in [0,1] (pixel/255).
//! Writes go through a temp file in the destination directory plus a rename,
//! so an interrupted run never leaves a truncated artifact behind.

use std::path::Path;

use image::RgbImage;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn load_png(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)
        .map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?
        .to_rgb8();
    Ok(img)
}

pub fn save_png_atomic(img: &RgbImage, path: &Path) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let stem = path
        .file_name()
        .ok_or_else(|| Error::Io(std::io::Error::other(format!("bad path {}", path.display()))))?
        .to_string_lossy()
        .into_owned();
    let tmp_name = format!(".{stem}.tmp-{}", std::process::id());
    let tmp = match dir {
        Some(d) => d.join(&tmp_name),
        None => Path::new(&tmp_name).to_path_buf(),
    };
    img.save_with_format(&tmp, image::ImageFormat::Png)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// One image as a 1×3×H×W tensor in [0,1].
pub fn image_to_tensor<T: Scalar>(img: &RgbImage) -> Tensor<T> {
    batch_to_tensor(std::slice::from_ref(img)).expect("single image batch is consistent")
}

/// Stack same-sized images into an N×3×H×W tensor in [0,1].
pub fn batch_to_tensor<T: Scalar>(imgs: &[RgbImage]) -> Result<Tensor<T>> {
    let Some(first) = imgs.first() else {
        return Err(Error::Dim("empty image batch".into()));
    };
    let (w, h) = (first.width() as usize, first.height() as usize);
    let mut data = Vec::with_capacity(imgs.len() * 3 * h * w);
    for img in imgs {
        if (img.width() as usize, img.height() as usize) != (w, h) {
            return Err(Error::Dim(format!(
                "batch mixes sizes {w}x{h} and {}x{}",
                img.width(),
                img.height()
            )));
        }
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    data.push(T::from_f64(f64::from(img.get_pixel(x as u32, y as u32)[c]) / 255.0));
                }
            }
        }
    }
    Tensor::new(vec![imgs.len(), 3, h, w], data)
}

/// Convert an N×3×H×W tensor back to images, clamping into [0,1] and
/// rounding to 8-bit levels.
pub fn tensor_to_images<T: Scalar>(t: &Tensor<T>) -> Result<Vec<RgbImage>> {
    let (n, c, h, w) = t.dims4()?;
    if c != 3 {
        return Err(Error::Dim(format!("expected 3 channels, got {c}")));
    }
    let data = t.data();
    let mut out = Vec::with_capacity(n);
    for ni in 0..n {
        let mut img = RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let mut px = [0u8; 3];
                for (ci, v) in px.iter_mut().enumerate() {
                    let raw = Scalar::to_f64(data[((ni * 3 + ci) * h + y) * w + x]);
                    *v = (raw.clamp(0.0, 1.0) * 255.0).round() as u8;
                }
                img.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        out.push(img);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip_preserves_pixels() {
        let img = RgbImage::from_fn(6, 4, |x, y| {
            image::Rgb([(x * 40) as u8, (y * 60) as u8, ((x + y) * 25) as u8])
        });
        let t: Tensor<f64> = image_to_tensor(&img);
        assert_eq!(t.shape(), &[1, 3, 4, 6]);
        let back = tensor_to_images(&t).unwrap();
        assert_eq!(back[0].as_raw(), img.as_raw());
    }

    #[test]
    fn out_of_range_values_clamp() {
        let t = Tensor::<f64>::from_f64s(vec![1, 3, 1, 1], &[-0.5, 0.5, 1.5]).unwrap();
        let img = tensor_to_images(&t).unwrap();
        assert_eq!(img[0].get_pixel(0, 0).0, [0, 128, 255]);
    }

    #[test]
    fn batch_rejects_mixed_sizes() {
        let a = RgbImage::new(4, 4);
        let b = RgbImage::new(4, 5);
        assert!(batch_to_tensor::<f32>(&[a, b]).is_err());
    }

    #[test]
    fn png_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let img = RgbImage::from_fn(9, 7, |x, y| image::Rgb([x as u8, y as u8, 200]));
        save_png_atomic(&img, &path).unwrap();
        let back = load_png(&path).unwrap();
        assert_eq!(back.as_raw(), img.as_raw());
        // No temp litter left behind.
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
