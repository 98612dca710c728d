//! PNG helpers for RGB patches and single-channel tissue masks.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::DataError;
use crate::field::ScalarField;
use crate::tissue::TissueMask;

/// Reads an 8-bit RGB image as a 3-channel field scaled to `[0, 1]`.
pub fn read_rgb(path: &Path) -> Result<ScalarField, DataError> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(ScalarField::from_fn(3, h as usize, w as usize, |c, y, x| {
        img.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
    }))
}

/// Writes the first three channels of `field` as 8-bit RGB, clamping to `[0, 1]`.
pub fn write_rgb(path: &Path, field: &ScalarField) -> Result<(), DataError> {
    let (h, w) = (field.height() as u32, field.width() as u32);
    let img: RgbImage = ImageBuffer::from_fn(w, h, |x, y| {
        let px = |c: usize| {
            let c = c.min(field.channels() - 1);
            (field.get(c, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8
        };
        Rgb([px(0), px(1), px(2)])
    });
    img.save(path)?;
    Ok(())
}

pub fn read_tissue_mask(path: &Path) -> Result<TissueMask, DataError> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    if w != h {
        return Err(DataError::Validation(vec![format!(
            "{}: tissue mask must be square, got {w}x{h}",
            path.display()
        )]));
    }
    TissueMask::from_codes(w as usize, img.as_raw()).map_err(|code| {
        DataError::Validation(vec![format!(
            "{}: unknown tissue code {code}",
            path.display()
        )])
    })
}

pub fn write_tissue_mask(path: &Path, mask: &TissueMask) -> Result<(), DataError> {
    let side = mask.side() as u32;
    let img: GrayImage =
        ImageBuffer::<Luma<u8>, _>::from_raw(side, side, mask.codes()).expect("sized buffer");
    img.save(path)?;
    Ok(())
}

/// `(width, height)` without decoding pixel data.
pub fn dimensions(path: &Path) -> Result<(usize, usize), DataError> {
    let (w, h) = image::image_dimensions(path)?;
    Ok((w as usize, h as usize))
}
