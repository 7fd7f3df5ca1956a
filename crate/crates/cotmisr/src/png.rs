//! 16-bit grayscale images and 8-bit binary masks on disk.

use std::path::Path;

use cotmisr_core::image::{Image, Mask};
use image::{DynamicImage, ImageBuffer, ImageReader, Luma};

use crate::error::{Error, Result};

const FULL_SCALE: f64 = 65535.0;

fn open(path: &Path) -> Result<DynamicImage> {
    ImageReader::open(path)
        .map_err(|e| Error::data(path, format!("cannot open image: {e}")))?
        .with_guessed_format()
        .map_err(|e| Error::data(path, format!("cannot read image: {e}")))?
        .decode()
        .map_err(|e| Error::data(path, format!("cannot decode image: {e}")))
}

/// Intensity in `[0, 1]` to the nearest 16-bit code.
pub fn quantize(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) as f64 * FULL_SCALE).round() as u16
}

pub fn dequantize(code: u16) -> f32 {
    (code as f64 / FULL_SCALE) as f32
}

/// Reads a single-channel image; 16-bit codes are divided by 65535 and
/// 8-bit codes by 255.
pub fn read_image(path: &Path) -> Result<Image> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(dequantize).collect(),
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
        other => return Err(Error::data(path, format!("expected a grayscale image, found {:?}", other.color()))),
    };
    Ok(Image::new(w, h, data)?)
}

/// Writes `img` as 16-bit grayscale after clamping to `[0, 1]`.
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let codes: Vec<u16> = img.data().iter().map(|&v| quantize(v)).collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, codes).expect("buffer matches extents");
    buf.save(path).map_err(|e| Error::Other(format!("{}: cannot write PNG: {e}", path.display())))
}

/// Any non-zero code counts as clear.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| v != 0).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(|v| v != 0).collect(),
        other => return Err(Error::data(path, format!("expected a grayscale mask, found {:?}", other.color()))),
    };
    Ok(Mask::new(w, h, data)?)
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let codes: Vec<u8> = mask.data().iter().map(|&c| if c { 255 } else { 0 }).collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(mask.width() as u32, mask.height() as u32, codes).expect("buffer matches extents");
    buf.save(path).map_err(|e| Error::Other(format!("{}: cannot write PNG: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixteen_bit_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = Image::from_fn(7, 5, |x, y| dequantize((x * 9000 + y * 1111) as u16));
        write_image(&p, &img).unwrap();
        assert_eq!(read_image(&p).unwrap(), img);
        for code in [0u16, 1, 2, 32767, 65534, 65535] {
            assert_eq!(quantize(dequantize(code)), code);
        }
    }

    #[test]
    fn writing_clamps_out_of_range_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        write_image(&p, &Image::new(2, 1, vec![-0.5, 1.5]).unwrap()).unwrap();
        assert_eq!(read_image(&p).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn masks_round_trip_and_threshold_at_nonzero() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = Mask::from_fn(4, 3, |x, y| (x + y) % 3 == 0);
        write_mask(&p, &m).unwrap();
        assert_eq!(read_mask(&p).unwrap(), m);

        let raw: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(3, 1, vec![0, 1, 200]).unwrap();
        raw.save(&p).unwrap();
        assert_eq!(read_mask(&p).unwrap().data(), &[false, true, true]);
    }

    #[test]
    fn corrupt_files_are_data_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.png");
        std::fs::write(&p, b"not a png").unwrap();
        assert_eq!(read_image(&p).unwrap_err().exit_code(), 3);
        let rgb: ImageBuffer<image::Rgb<u8>, Vec<u8>> = ImageBuffer::from_raw(1, 1, vec![1, 2, 3]).unwrap();
        rgb.save(&p).unwrap();
        assert_eq!(read_image(&p).unwrap_err().exit_code(), 3);
    }
}
