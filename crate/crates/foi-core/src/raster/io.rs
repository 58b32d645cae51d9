//! Raster file I/O.
//!
//! 8-bit grayscale and 24-bit RGB planes are read and written as PNG or
//! binary PGM/PPM. Unit-interval float planes use the raw FOIM stream: a
//! 16-byte header (magic `FOIM`, little-endian u32 width, u32 height, f32
//! microns-per-pixel) followed by width*height little-endian f32 values in
//! row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};

use super::{GrayPlane, ImagePlane, RgbRaster};
use crate::error::{FoiError, Result};

const FOIM_MAGIC: &[u8; 4] = b"FOIM";

#[derive(Clone, Copy, PartialEq, Eq)]
enum Container {
    Png,
    Pnm,
}

fn container_for(path: &Path) -> Result<Container> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => Ok(Container::Png),
        Some("pgm") | Some("ppm") | Some("pnm") => Ok(Container::Pnm),
        other => Err(FoiError::InvalidParameter(format!(
            "unsupported raster extension {:?} for {}",
            other,
            path.display()
        ))),
    }
}

fn encode(
    path: &Path,
    data: &[u8],
    width: u32,
    height: u32,
    color: ExtendedColorType,
) -> Result<()> {
    let file = File::create(path).map_err(|e| FoiError::io(path, e))?;
    let writer = BufWriter::new(file);
    let result = match container_for(path)? {
        Container::Png => PngEncoder::new(writer).write_image(data, width, height, color),
        Container::Pnm => {
            let subtype = match color {
                ExtendedColorType::L8 => PnmSubtype::Graymap(SampleEncoding::Binary),
                _ => PnmSubtype::Pixmap(SampleEncoding::Binary),
            };
            PnmEncoder::new(writer)
                .with_subtype(subtype)
                .write_image(data, width, height, color)
        }
    };
    result.map_err(|e| FoiError::Parse(format!("{}: {e}", path.display())))
}

/// Writes an 8-bit grayscale plane as PNG or binary PGM (by extension).
pub fn save_gray(path: &Path, plane: &GrayPlane) -> Result<()> {
    encode(
        path,
        plane.values(),
        plane.width() as u32,
        plane.height() as u32,
        ExtendedColorType::L8,
    )
}

/// Reads an 8-bit grayscale image. Resolution metadata is not stored in
/// these containers, so the caller supplies it.
pub fn load_gray(path: &Path, microns_per_pixel: f64) -> Result<GrayPlane> {
    let img = image::open(path).map_err(|e| FoiError::Parse(format!("{}: {e}", path.display())))?;
    let gray = img.to_luma8();
    ImagePlane::from_values(
        gray.width() as usize,
        gray.height() as usize,
        microns_per_pixel,
        gray.into_raw(),
    )
}

/// Writes a 24-bit RGB raster as PNG or binary PPM (by extension).
pub fn save_rgb(path: &Path, rgb: &RgbRaster) -> Result<()> {
    let (r, g, b) = rgb.channels();
    let mut data = Vec::with_capacity(rgb.width() * rgb.height() * 3);
    for ((&rv, &gv), &bv) in r.values().iter().zip(g.values()).zip(b.values()) {
        data.extend_from_slice(&[rv, gv, bv]);
    }
    encode(
        path,
        &data,
        rgb.width() as u32,
        rgb.height() as u32,
        ExtendedColorType::Rgb8,
    )
}

pub fn load_rgb(path: &Path, microns_per_pixel: f64) -> Result<RgbRaster> {
    let img = image::open(path).map_err(|e| FoiError::Parse(format!("{}: {e}", path.display())))?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.into_raw();
    let mut r = Vec::with_capacity(w * h);
    let mut g = Vec::with_capacity(w * h);
    let mut b = Vec::with_capacity(w * h);
    for px in raw.chunks_exact(3) {
        r.push(px[0]);
        g.push(px[1]);
        b.push(px[2]);
    }
    RgbRaster::from_planes(
        ImagePlane::from_values(w, h, microns_per_pixel, r)?,
        ImagePlane::from_values(w, h, microns_per_pixel, g)?,
        ImagePlane::from_values(w, h, microns_per_pixel, b)?,
    )
}

/// Writes a 0/1 mask as a 0/255 grayscale image so it stays viewable.
pub fn save_mask(path: &Path, mask: &ImagePlane<u8>) -> Result<()> {
    save_gray(path, &mask.map(|v| if v != 0 { 255 } else { 0 }))
}

/// Reads a mask written by [`save_mask`]; any nonzero sample becomes 1.
pub fn load_mask(path: &Path, microns_per_pixel: f64) -> Result<ImagePlane<u8>> {
    Ok(load_gray(path, microns_per_pixel)?.map(|v| u8::from(v != 0)))
}

/// Writes a float plane as a FOIM stream.
pub fn write_foim(path: &Path, plane: &ImagePlane<f32>) -> Result<()> {
    let file = File::create(path).map_err(|e| FoiError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| FoiError::io(path, e);
    w.write_all(FOIM_MAGIC).map_err(io)?;
    w.write_all(&(plane.width() as u32).to_le_bytes())
        .map_err(io)?;
    w.write_all(&(plane.height() as u32).to_le_bytes())
        .map_err(io)?;
    w.write_all(&(plane.microns_per_pixel() as f32).to_le_bytes())
        .map_err(io)?;
    let mut bytes = Vec::with_capacity(plane.values().len() * 4);
    for v in plane.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes).map_err(io)?;
    w.flush().map_err(io)
}

/// Reads a FOIM stream written by [`write_foim`].
pub fn read_foim(path: &Path) -> Result<ImagePlane<f32>> {
    let file = File::open(path).map_err(|e| FoiError::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut header = [0u8; 16];
    r.read_exact(&mut header)
        .map_err(|e| FoiError::io(path, e))?;
    if &header[0..4] != FOIM_MAGIC {
        return Err(FoiError::Parse(format!(
            "{}: bad FOIM magic",
            path.display()
        )));
    }
    let width = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mpp = f32::from_le_bytes(header[12..16].try_into().unwrap()) as f64;
    let count = width.checked_mul(height).ok_or_else(|| {
        FoiError::Parse(format!(
            "{}: implausible dimensions {width}x{height}",
            path.display()
        ))
    })?;
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)
        .map_err(|e| FoiError::io(path, e))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| FoiError::io(path, e))? != 0 {
        return Err(FoiError::Parse(format!(
            "{}: trailing data after {width}x{height} samples",
            path.display()
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ImagePlane::from_values(width, height, mpp, values)
}
