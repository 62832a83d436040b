//! PNG encoding of rendered outputs and id maps.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, ImageFormat, Luma, RgbImage as PngRgb};

use crate::error::{Error, Result};
use crate::render::RgbImage;
use crate::scene::{IdentityMap, Mask2D};

fn img_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::input(format!("{}: {other}", path.display())),
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn rgb_buffer(image: &RgbImage) -> PngRgb {
    PngRgb::from_fn(image.width as u32, image.height as u32, |x, y| {
        let p = (y as usize * image.width + x as usize) * 3;
        image::Rgb([
            to_u8(image.data[p]),
            to_u8(image.data[p + 1]),
            to_u8(image.data[p + 2]),
        ])
    })
}

pub fn write_rgb(image: &RgbImage, path: &Path) -> Result<()> {
    rgb_buffer(image).save(path).map_err(|e| img_err(path, e))
}

/// PNG bytes of an RGB image.
pub fn encode_rgb_png(image: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    rgb_buffer(image)
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Internal(e.to_string()))?;
    Ok(out.into_inner())
}

/// Scalars in [0, 1] as 8-bit grayscale.
pub fn write_gray(values: &[f64], width: usize, height: usize, path: &Path) -> Result<()> {
    let img = GrayImage::from_fn(width as u32, height as u32, |x, y| {
        Luma([to_u8(values[y as usize * width + x as usize])])
    });
    img.save(path).map_err(|e| img_err(path, e))
}

pub fn write_mask(mask: &Mask2D, path: &Path) -> Result<()> {
    let values: Vec<f64> = mask.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    write_gray(&values, mask.width, mask.height, path)
}

/// Any PNG; non-zero luminance is on.
pub fn read_mask(path: &Path) -> Result<Mask2D> {
    let img = image::open(path).map_err(|e| img_err(path, e))?.into_luma16();
    Ok(Mask2D {
        width: img.width() as usize,
        height: img.height() as usize,
        bits: img.pixels().map(|p| p.0[0] != 0).collect(),
    })
}

/// Identity map as 16-bit grayscale, pixel value = id.
pub fn write_identity_map(map: &IdentityMap, path: &Path) -> Result<()> {
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(map.width as u32, map.height as u32, map.ids.clone())
            .ok_or_else(|| Error::Internal("identity map buffer size".into()))?;
    DynamicImage::ImageLuma16(img)
        .save(path)
        .map_err(|e| img_err(path, e))
}

pub fn read_identity_map(path: &Path) -> Result<IdentityMap> {
    let img = image::open(path).map_err(|e| img_err(path, e))?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let ids = match img {
        DynamicImage::ImageLuma16(b) => b.into_raw(),
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(u16::from).collect(),
        other => {
            return Err(Error::input(format!(
                "{}: id maps must be grayscale, got {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    Ok(IdentityMap { width, height, ids })
}
