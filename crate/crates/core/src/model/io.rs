//! PNG and JSON file I/O for images, masks, label maps and prompt sets.

use std::io::Cursor;
use std::path::Path;

use image::codecs::png::{PngDecoder, PngEncoder};
use image::{ExtendedColorType, ImageDecoder, ImageEncoder};

use super::image::{Image2D, LabelMap, Mask, PromptSet};
use crate::error::{Error, Result};

/// Decoded grayscale PNG: raw codes plus the maximum code for its bit depth.
struct GrayRaster {
    height: usize,
    width: usize,
    codes: Vec<u16>,
    max_code: u16,
}

fn decode_gray_png(bytes: &[u8]) -> Result<GrayRaster> {
    let decoder = PngDecoder::new(Cursor::new(bytes)).map_err(|e| Error::Decode(e.to_string()))?;
    let (width, height) = decoder.dimensions();
    let original = decoder.original_color_type();
    let color = decoder.color_type();
    match original {
        ExtendedColorType::L8 | ExtendedColorType::L16 => {}
        ExtendedColorType::L1 | ExtendedColorType::L2 | ExtendedColorType::L4 => {
            return Err(Error::Unsupported(format!(
                "bit depth of {original:?}; expected 8- or 16-bit grayscale"
            )))
        }
        _ => return Err(Error::Unsupported("not grayscale".into())),
    }
    if width == 0 || height == 0 {
        return Err(Error::InvalidDimensions("zero-dimension image".into()));
    }
    let mut buf = vec![0u8; decoder.total_bytes() as usize];
    decoder
        .read_image(&mut buf)
        .map_err(|e| Error::Decode(e.to_string()))?;
    let (codes, max_code) = match color {
        image::ColorType::L8 => (buf.iter().map(|&b| u16::from(b)).collect(), u8::MAX as u16),
        image::ColorType::L16 => (
            buf.chunks_exact(2)
                .map(|c| u16::from_ne_bytes([c[0], c[1]]))
                .collect(),
            u16::MAX,
        ),
        other => return Err(Error::Unsupported(format!("decoded color type {other:?}"))),
    };
    Ok(GrayRaster {
        height: height as usize,
        width: width as usize,
        codes,
        max_code,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Decodes an 8- or 16-bit grayscale PNG, scaling codes into `[0, 1]`.
pub fn decode_image(id: impl Into<String>, bytes: &[u8]) -> Result<Image2D> {
    let raster = decode_gray_png(bytes)?;
    let scale = f64::from(raster.max_code);
    let pixels = raster.codes.iter().map(|&c| f64::from(c) / scale).collect();
    Ok(Image2D::from_parts_unchecked(
        id.into(),
        raster.height,
        raster.width,
        pixels,
    ))
}

/// Loads a grayscale PNG. The image id is the file stem.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image2D> {
    let path = path.as_ref();
    decode_image(stem_of(path), &read_file(path)?).map_err(|e| e.context(path.display().to_string()))
}

/// Nonzero pixels are foreground.
pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let raster = decode_gray_png(&read_file(path)?).map_err(|e| e.context(path.display().to_string()))?;
    Mask::new(
        raster.height,
        raster.width,
        raster.codes.iter().map(|&c| c != 0).collect(),
    )
}

/// Raw PNG codes become integer labels.
pub fn load_label_map(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    let raster = decode_gray_png(&read_file(path)?).map_err(|e| e.context(path.display().to_string()))?;
    LabelMap::new(
        raster.height,
        raster.width,
        raster.codes.iter().map(|&c| u32::from(c)).collect(),
    )
}

pub fn encode_gray8_png(height: usize, width: usize, codes: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(codes, width as u32, height as u32, ExtendedColorType::L8)
        .map_err(|e| Error::Decode(e.to_string()))?;
    Ok(out)
}

pub fn encode_gray16_png(height: usize, width: usize, codes: &[u16]) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = codes.iter().flat_map(|c| c.to_ne_bytes()).collect();
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(&bytes, width as u32, height as u32, ExtendedColorType::L16)
        .map_err(|e| Error::Decode(e.to_string()))?;
    Ok(out)
}

pub fn encode_rgb8_png(height: usize, width: usize, rgb: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(rgb, width as u32, height as u32, ExtendedColorType::Rgb8)
        .map_err(|e| Error::Decode(e.to_string()))?;
    Ok(out)
}

/// 8-bit PNG of an image, codes `round(v * 255)`.
pub fn encode_image_png(image: &Image2D) -> Result<Vec<u8>> {
    let codes: Vec<u8> = image
        .pixels()
        .iter()
        .map(|v| (v * 255.0).round() as u8)
        .collect();
    encode_gray8_png(image.height(), image.width(), &codes)
}

/// Mask as 0/255 grayscale PNG.
pub fn encode_mask_png(mask: &Mask) -> Result<Vec<u8>> {
    let codes: Vec<u8> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    encode_gray8_png(mask.height(), mask.width(), &codes)
}

pub fn decode_mask_png(bytes: &[u8]) -> Result<Mask> {
    let raster = decode_gray_png(bytes)?;
    Mask::new(
        raster.height,
        raster.width,
        raster.codes.iter().map(|&c| c != 0).collect(),
    )
}

pub fn write_bytes(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_image(image: &Image2D, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path, &encode_image_png(image)?)
}

pub fn save_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path, &encode_mask_png(mask)?)
}

pub fn load_prompts(path: impl AsRef<Path>) -> Result<PromptSet> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::from(e).context(path.display().to_string()))
}

pub fn save_prompts(prompts: &PromptSet, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path, &serde_json::to_vec_pretty(prompts)?)
}
