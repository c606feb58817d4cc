//! PNG conversion for chips and side-by-side panels.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};

use crate::chipio::write_atomic;
use crate::error::{Error, Result};
use crate::raster::{RasterChip, ValueRange};

const GAP: u32 = 2;

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Display form: 1 channel as gray, otherwise the first three channels as RGB.
pub fn chip_to_rgb(chip: &RasterChip) -> Result<RgbImage> {
    let unit = match chip.value_range() {
        ValueRange::Raw => {
            return Err(Error::Range("raw chips must be normalized before display".into()));
        }
        _ => chip.to_unit()?,
    };
    let (h, w) = (unit.height() as u32, unit.width() as u32);
    let pick = |c: usize| if unit.channels() == 1 { 0 } else { c.min(unit.channels() - 1) };
    Ok(RgbImage::from_fn(w, h, |x, y| {
        let (y, x) = (y as usize, x as usize);
        Rgb([0, 1, 2].map(|c| to_u8(unit.get(pick(c), y, x))))
    }))
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| Error::format("png", e.to_string()))?;
    Ok(buf.into_inner())
}

pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    write_atomic(path, &encode_png(img)?)
}

/// Decodes a PNG into a unit-range RGB chip.
pub fn decode_png(bytes: &[u8]) -> Result<RasterChip> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::format("png", e.to_string()))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    RasterChip::from_fn(3, h as usize, w as usize, ValueRange::Unit, |c, y, x| {
        img.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
    })
}

/// Lays out rows of equally sized chips with white gaps.
pub fn panel_grid(rows: &[Vec<&RasterChip>]) -> Result<RgbImage> {
    let first = rows
        .first()
        .and_then(|r| r.first())
        .ok_or_else(|| Error::Validation("empty figure grid".into()))?;
    let (ch, cw) = (first.height() as u32, first.width() as u32);
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0) as u32;
    let n_rows = rows.len() as u32;
    let mut out = RgbImage::from_pixel(
        cols * cw + (cols - 1) * GAP,
        n_rows * ch + (n_rows - 1) * GAP,
        Rgb([255, 255, 255]),
    );
    for (r, row) in rows.iter().enumerate() {
        for (c, chip) in row.iter().enumerate() {
            if chip.height() as u32 != ch || chip.width() as u32 != cw {
                return Err(Error::Dimension("figure panels differ in size".into()));
            }
            let img = chip_to_rgb(chip)?;
            image::imageops::replace(
                &mut out,
                &img,
                (c as u32 * (cw + GAP)) as i64,
                (r as u32 * (ch + GAP)) as i64,
            );
        }
    }
    Ok(out)
}
