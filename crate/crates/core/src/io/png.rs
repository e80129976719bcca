//! 8-bit PNG images, masks and colour-mapped previews.

use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};

use super::{read_file, write_file};
use crate::error::{Error, Result};
use crate::imageops::{Image, Mask, Modality};

fn codec(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Codec {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn encode(path: &Path, w: usize, h: usize, bytes: &[u8], color: ExtendedColorType) -> Result<()> {
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(bytes, w as u32, h as u32, color)
        .map_err(|e| codec(path, e))?;
    write_file(path, &out)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an image with values in `[0, 1]`; values outside are clipped.
pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let bytes: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
    encode(
        path,
        img.width(),
        img.height(),
        &bytes,
        ExtendedColorType::L8,
    )
}

/// Reads any PNG as 8-bit luminance scaled to `[0, 1]`.
pub fn read_png(path: &Path, modality: Modality) -> Result<Image> {
    let bytes = read_file(path)?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| codec(path, e))?
        .into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Image::new(
        w,
        h,
        img.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        modality,
    )
}

/// Set pixels are white (255), the rest black.
pub fn write_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    let bytes: Vec<u8> = mask
        .data()
        .iter()
        .map(|&m| if m { 255 } else { 0 })
        .collect();
    encode(
        path,
        mask.width(),
        mask.height(),
        &bytes,
        ExtendedColorType::L8,
    )
}

/// Pixels brighter than mid-gray are set.
pub fn read_mask_png(path: &Path) -> Result<Mask> {
    let img = read_png(path, Modality::Intensity)?;
    Mask::new(
        img.width(),
        img.height(),
        img.data().iter().map(|&v| v > 0.5).collect(),
    )
}

pub fn write_rgb_png(path: &Path, w: usize, h: usize, rgb: &[[u8; 3]]) -> Result<()> {
    let bytes: Vec<u8> = rgb.iter().flatten().copied().collect();
    encode(path, w, h, &bytes, ExtendedColorType::Rgb8)
}

/// Maps values onto a dark-blue → teal → yellow ramp over `[lo, hi]`.
/// Non-finite values are drawn black.
pub fn colorize(values: &[f64], lo: f64, hi: f64) -> Vec<[u8; 3]> {
    const STOPS: [[f64; 3]; 5] = [
        [0.267, 0.005, 0.329],
        [0.229, 0.322, 0.546],
        [0.128, 0.567, 0.551],
        [0.369, 0.789, 0.383],
        [0.993, 0.906, 0.144],
    ];
    let span = if hi > lo { hi - lo } else { 1.0 };
    values
        .iter()
        .map(|&v| {
            if !v.is_finite() {
                return [0, 0, 0];
            }
            let s = ((v - lo) / span).clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
            let k = (s.floor() as usize).min(STOPS.len() - 2);
            let f = s - k as f64;
            let c = |i: usize| to_u8(STOPS[k][i] + f * (STOPS[k + 1][i] - STOPS[k][i]));
            [c(0), c(1), c(2)]
        })
        .collect()
}
