//! Reading and writing grayscale rasters: intensity images (PNG/PGM), external
//! score maps and depth maps (16-bit PNG).

use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageReader, Luma};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

type Gray16 = ImageBuffer<Luma<u16>, Vec<u16>>;
type Gray8 = ImageBuffer<Luma<u8>, Vec<u8>>;

fn decode(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ));
    }
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    reader
        .decode()
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Loads an 8- or 16-bit grayscale PNG or PGM, normalized by the maximum
/// representable value. Color or alpha images are rejected.
pub fn load_image<T: Scalar>(path: impl AsRef<Path>) -> Result<Image<T>> {
    let path = path.as_ref();
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<T> = match img {
        DynamicImage::ImageLuma8(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| T::from_f64_lossy(v as f64 / 255.0))
            .collect(),
        DynamicImage::ImageLuma16(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| T::from_f64_lossy(v as f64 / 65535.0))
            .collect(),
        other => {
            return Err(Error::format(
                path,
                format!("expected 8/16-bit grayscale, found {:?}", other.color()),
            ))
        }
    };
    Image::from_intensities(w, h, data)
}

fn to_u16<T: Scalar>(v: T) -> u16 {
    (v.to_f64_lossy().clamp(0.0, 1.0) * 65535.0).round() as u16
}

fn write_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    }
}

/// Writes values clamped to `[0, 1]` as a 16-bit grayscale PNG.
pub fn save_png16<T: Scalar>(img: &Image<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<u16> = img.data().iter().map(|&v| to_u16(v)).collect();
    let buf = Gray16::from_raw(img.width() as u32, img.height() as u32, raw)
        .expect("buffer length matches dimensions");
    buf.save(path).map_err(|e| write_err(path, e))
}

/// Debug dump as binary PGM, values clamped to `[0, 1]` and scaled to 255.
pub fn save_pgm<T: Scalar>(img: &Image<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (v.to_f64_lossy().clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = Gray8::from_raw(img.width() as u32, img.height() as u32, raw)
        .expect("buffer length matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Pnm)
        .map_err(|e| write_err(path, e))
}

/// Score map stored as a 16-bit grayscale PNG with `score = value / 65535`.
pub fn load_score_png<T: Scalar>(path: impl AsRef<Path>) -> Result<Image<T>> {
    let path = path.as_ref();
    match decode(path)? {
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            let data = buf
                .into_raw()
                .into_iter()
                .map(|v| T::from_f64_lossy(v as f64 / 65535.0))
                .collect();
            Image::new(w, h, data)
        }
        other => Err(Error::format(
            path,
            format!("score maps must be 16-bit grayscale, found {:?}", other.color()),
        )),
    }
}

/// Depth map in meters from a 16-bit PNG in millimeters (0 = invalid).
pub fn load_depth_png(path: impl AsRef<Path>) -> Result<Image<f64>> {
    let path = path.as_ref();
    match decode(path)? {
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            let data = buf.into_raw().into_iter().map(|v| v as f64 / 1000.0).collect();
            Image::new(w, h, data)
        }
        other => Err(Error::format(
            path,
            format!("depth maps must be 16-bit grayscale, found {:?}", other.color()),
        )),
    }
}

/// Writes a depth map in meters as 16-bit millimeters; depths beyond the
/// representable range are stored as invalid.
pub fn save_depth_png(depth: &Image<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<u16> = depth
        .data()
        .iter()
        .map(|&d| {
            let mm = (d * 1000.0).round();
            if d > 0.0 && mm <= 65535.0 {
                mm as u16
            } else {
                0
            }
        })
        .collect();
    let buf = Gray16::from_raw(depth.width() as u32, depth.height() as u32, raw)
        .expect("buffer length matches dimensions");
    buf.save(path).map_err(|e| write_err(path, e))
}
