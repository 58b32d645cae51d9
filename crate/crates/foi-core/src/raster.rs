//! Core raster container and the generic image operations the rest of the
//! pipeline is built from: grayscale conversion, block-mean downsampling,
//! overlapping tiling and seam-aware stitching.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{FoiError, Result};

pub mod io;

/// A 2-D scalar raster with physical resolution metadata.
///
/// The element type depends on the role the plane plays: `u8` for
/// intensities and binary masks, `f32` for unit-interval segmentation maps,
/// `f64` for density maps, `u32` for ground-truth counts. Values are stored
/// row-major. Planes are immutable once handed to a pipeline stage and are
/// safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane<T> {
    width: usize,
    height: usize,
    microns_per_pixel: f64,
    values: Vec<T>,
}

pub type GrayPlane = ImagePlane<u8>;

impl<T: Copy> ImagePlane<T> {
    pub fn new(width: usize, height: usize, microns_per_pixel: f64, fill: T) -> Result<Self> {
        check_plane_geometry(width, height, microns_per_pixel)?;
        Ok(ImagePlane {
            width,
            height,
            microns_per_pixel,
            values: vec![fill; width * height],
        })
    }

    pub fn from_values(
        width: usize,
        height: usize,
        microns_per_pixel: f64,
        values: Vec<T>,
    ) -> Result<Self> {
        check_plane_geometry(width, height, microns_per_pixel)?;
        if values.len() != width * height {
            return Err(FoiError::DimensionMismatch(format!(
                "expected {}x{} = {} values, got {}",
                width,
                height,
                width * height,
                values.len()
            )));
        }
        Ok(ImagePlane {
            width,
            height,
            microns_per_pixel,
            values,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn microns_per_pixel(&self) -> f64 {
        self.microns_per_pixel
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        debug_assert!(x < self.width && y < self.height);
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        debug_assert!(x < self.width && y < self.height);
        self.values[y * self.width + x] = value;
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn map<U: Copy>(&self, mut f: impl FnMut(T) -> U) -> ImagePlane<U> {
        ImagePlane {
            width: self.width,
            height: self.height,
            microns_per_pixel: self.microns_per_pixel,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_dims<U: Copy>(&self, other: &ImagePlane<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Block-mean downsampling shared by the typed `downsample` wrappers.
    /// Edge blocks are clipped, so output dimensions are `ceil(input/factor)`
    /// and the physical resolution scales by `factor`.
    fn downsample_with<U: Copy>(
        &self,
        factor: usize,
        convert: impl Fn(f64) -> U,
    ) -> Result<ImagePlane<U>>
    where
        T: Into<f64>,
    {
        if factor < 1 {
            return Err(FoiError::InvalidParameter(
                "downsample factor must be >= 1".into(),
            ));
        }
        let out_w = self.width.div_ceil(factor);
        let out_h = self.height.div_ceil(factor);
        let mut out = Vec::with_capacity(out_w * out_h);
        for by in 0..out_h {
            let y0 = by * factor;
            let y1 = (y0 + factor).min(self.height);
            for bx in 0..out_w {
                let x0 = bx * factor;
                let x1 = (x0 + factor).min(self.width);
                let mut sum = 0.0f64;
                for y in y0..y1 {
                    let row = &self.values[y * self.width + x0..y * self.width + x1];
                    for &v in row {
                        sum += v.into();
                    }
                }
                let count = ((x1 - x0) * (y1 - y0)) as f64;
                out.push(convert(sum / count));
            }
        }
        ImagePlane::from_values(out_w, out_h, self.microns_per_pixel * factor as f64, out)
    }
}

impl ImagePlane<u8> {
    /// Block-mean downsampling with round-half-up integer rounding.
    pub fn downsample(&self, factor: usize) -> Result<ImagePlane<u8>> {
        self.downsample_with(factor, |m| round_half_up(m).min(255.0) as u8)
    }
}

impl ImagePlane<f32> {
    pub fn downsample(&self, factor: usize) -> Result<ImagePlane<f32>> {
        self.downsample_with(factor, |m| m as f32)
    }
}

fn check_plane_geometry(width: usize, height: usize, microns_per_pixel: f64) -> Result<()> {
    if width < 1 || height < 1 {
        return Err(FoiError::InvalidParameter(format!(
            "plane dimensions must be >= 1, got {width}x{height}"
        )));
    }
    if microns_per_pixel <= 0.0 || !microns_per_pixel.is_finite() {
        return Err(FoiError::InvalidParameter(format!(
            "microns_per_pixel must be positive and finite, got {microns_per_pixel}"
        )));
    }
    Ok(())
}

/// Rounds to the nearest integer with halves rounding up. Used for every
/// integer rounding in the pipeline so results do not drift across
/// platforms.
#[inline]
pub(crate) fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Slide geometry independent of any loaded raster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlideGeometry {
    pub width: usize,
    pub height: usize,
    pub microns_per_pixel: f64,
}

/// Axis-aligned pixel rectangle, top-left anchored, half-open on both axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Rect {
        Rect { x, y, w, h }
    }

    #[inline]
    pub fn right(&self) -> usize {
        self.x + self.w
    }

    #[inline]
    pub fn bottom(&self) -> usize {
        self.y + self.h
    }

    /// Half-open membership: the left/top edges count, the right/bottom
    /// edges do not.
    #[inline]
    pub fn contains_point(&self, px: usize, py: usize) -> bool {
        px >= self.x && px < self.right() && py >= self.y && py < self.bottom()
    }
}

/// 24-bit RGB raster stored as three aligned planes.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbRaster {
    r: GrayPlane,
    g: GrayPlane,
    b: GrayPlane,
}

impl RgbRaster {
    pub fn from_planes(r: GrayPlane, g: GrayPlane, b: GrayPlane) -> Result<RgbRaster> {
        if !r.same_dims(&g) || !r.same_dims(&b) {
            return Err(FoiError::DimensionMismatch(format!(
                "rgb channels differ: r {}x{}, g {}x{}, b {}x{}",
                r.width(),
                r.height(),
                g.width(),
                g.height(),
                b.width(),
                b.height()
            )));
        }
        if r.microns_per_pixel() != g.microns_per_pixel()
            || r.microns_per_pixel() != b.microns_per_pixel()
        {
            return Err(FoiError::DimensionMismatch(
                "rgb channels carry different resolutions".into(),
            ));
        }
        Ok(RgbRaster { r, g, b })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.r.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.r.height()
    }

    #[inline]
    pub fn microns_per_pixel(&self) -> f64 {
        self.r.microns_per_pixel()
    }

    pub fn channels(&self) -> (&GrayPlane, &GrayPlane, &GrayPlane) {
        (&self.r, &self.g, &self.b)
    }

    pub fn geometry(&self) -> SlideGeometry {
        SlideGeometry {
            width: self.width(),
            height: self.height(),
            microns_per_pixel: self.microns_per_pixel(),
        }
    }

    pub fn grayscale(&self) -> GrayPlane {
        to_grayscale(&self.r, &self.g, &self.b).expect("channels are aligned by construction")
    }
}

/// Fixed-weight luminance conversion (0.299 / 0.587 / 0.114), rounded
/// half-up and clamped to `[0, 255]`.
pub fn to_grayscale(r: &GrayPlane, g: &GrayPlane, b: &GrayPlane) -> Result<GrayPlane> {
    if !r.same_dims(g) || !r.same_dims(b) {
        return Err(FoiError::DimensionMismatch(format!(
            "channel dimensions differ: r {}x{}, g {}x{}, b {}x{}",
            r.width(),
            r.height(),
            g.width(),
            g.height(),
            b.width(),
            b.height()
        )));
    }
    let values = r
        .values()
        .iter()
        .zip(g.values())
        .zip(b.values())
        .map(|((&rv, &gv), &bv)| {
            let lum = 0.299 * rv as f64 + 0.587 * gv as f64 + 0.114 * bv as f64;
            round_half_up(lum).min(255.0) as u8
        })
        .collect();
    ImagePlane::from_values(r.width(), r.height(), r.microns_per_pixel(), values)
}

/// Overlapping tile layout over a plane.
///
/// Tiles of `tile_size` are anchored at multiples of
/// `stride = tile_size - 2*margin`; the last anchor on each axis is clamped
/// so the final tile ends exactly at the plane edge. Planes smaller than
/// `tile_size` get a single short tile at the origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileGrid {
    tile_size: usize,
    margin: usize,
    x_origins: Vec<usize>,
    y_origins: Vec<usize>,
}

impl TileGrid {
    #[inline]
    pub fn tile_size(&self) -> usize {
        self.tile_size
    }

    #[inline]
    pub fn margin(&self) -> usize {
        self.margin
    }

    #[inline]
    pub fn stride(&self) -> usize {
        self.tile_size - 2 * self.margin
    }

    pub fn x_origins(&self) -> &[usize] {
        &self.x_origins
    }

    pub fn y_origins(&self) -> &[usize] {
        &self.y_origins
    }

    /// All tile anchors in row-major order (y outer, x inner). This order
    /// also defines the stitching tie-break.
    pub fn origins(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.x_origins.len() * self.y_origins.len());
        for &oy in &self.y_origins {
            for &ox in &self.x_origins {
                out.push((ox, oy));
            }
        }
        out
    }

    /// Anchors with their grid indices, for per-tile seed derivation.
    pub fn origins_indexed(&self) -> Vec<((usize, usize), (usize, usize))> {
        let mut out = Vec::with_capacity(self.x_origins.len() * self.y_origins.len());
        for (j, &oy) in self.y_origins.iter().enumerate() {
            for (i, &ox) in self.x_origins.iter().enumerate() {
                out.push(((i, j), (ox, oy)));
            }
        }
        out
    }

    /// The tile at `origin`, clipped at the plane edge (only short when the
    /// plane itself is smaller than `tile_size`).
    pub fn tile_rect(&self, origin: (usize, usize), plane_w: usize, plane_h: usize) -> Rect {
        Rect {
            x: origin.0,
            y: origin.1,
            w: self.tile_size.min(plane_w - origin.0),
            h: self.tile_size.min(plane_h - origin.1),
        }
    }
}

/// Builds the overlapping tile layout for a `width` x `height` plane.
pub fn make_tile_grid(
    width: usize,
    height: usize,
    tile_size: usize,
    margin: usize,
) -> Result<TileGrid> {
    if width < 1 || height < 1 {
        return Err(FoiError::InvalidParameter(format!(
            "plane dimensions must be >= 1, got {width}x{height}"
        )));
    }
    if tile_size <= 2 * margin {
        return Err(FoiError::InvalidParameter(format!(
            "tile_size ({tile_size}) must exceed twice the margin ({margin})"
        )));
    }
    let stride = tile_size - 2 * margin;
    Ok(TileGrid {
        tile_size,
        margin,
        x_origins: axis_origins(width, tile_size, stride),
        y_origins: axis_origins(height, tile_size, stride),
    })
}

fn axis_origins(extent: usize, tile: usize, stride: usize) -> Vec<usize> {
    let mut origins = Vec::new();
    let mut o = 0usize;
    loop {
        if o + tile >= extent {
            origins.push(o.min(extent.saturating_sub(tile)));
            return origins;
        }
        origins.push(o);
        o += stride;
    }
}

/// Reassembles per-tile maps into one plane.
///
/// Every output pixel takes its value from the covering tile in which it is
/// most interior (greatest distance to the tile border), ties broken by the
/// earlier origin in row-major order; tile margins are therefore never used
/// where an overlapping tile covers the pixel more interiorly.
pub fn stitch<T: Copy + Default>(
    tiles: &[((usize, usize), ImagePlane<T>)],
    grid: &TileGrid,
    full_width: usize,
    full_height: usize,
) -> Result<ImagePlane<T>> {
    stitch_to_scale(tiles, grid, full_width, full_height, 1)
}

/// [`stitch`] generalized to tile maps produced at a coarser scale.
///
/// Each output cell is resolved through its representative full-resolution
/// pixel (the cell center), so clamped tile origins that are not multiples
/// of `scale` still land on the nearest coarse cell. At `scale` 1 this is
/// exactly the per-pixel stitch.
pub fn stitch_to_scale<T: Copy + Default>(
    tiles: &[((usize, usize), ImagePlane<T>)],
    grid: &TileGrid,
    full_width: usize,
    full_height: usize,
    scale: usize,
) -> Result<ImagePlane<T>> {
    if scale < 1 {
        return Err(FoiError::InvalidParameter(
            "stitch scale must be >= 1".into(),
        ));
    }
    let origins = grid.origins();
    let mut by_origin: HashMap<(usize, usize), &ImagePlane<T>> = HashMap::new();
    for (origin, map) in tiles {
        if by_origin.insert(*origin, map).is_some() {
            return Err(FoiError::IncompleteInput(format!(
                "duplicate tile for origin ({}, {})",
                origin.0, origin.1
            )));
        }
    }
    if tiles.len() != origins.len() {
        return Err(FoiError::IncompleteInput(format!(
            "expected {} tiles, got {}",
            origins.len(),
            tiles.len()
        )));
    }

    let out_w = full_width.div_ceil(scale);
    let out_h = full_height.div_ceil(scale);
    let mut best = vec![i64::MIN; out_w * out_h];
    let mut values = vec![T::default(); out_w * out_h];
    let mut mpp = None;

    for origin in origins {
        let map = *by_origin.get(&origin).ok_or_else(|| {
            FoiError::IncompleteInput(format!(
                "missing tile for origin ({}, {})",
                origin.0, origin.1
            ))
        })?;
        let rect = grid.tile_rect(origin, full_width, full_height);
        let want_w = rect.w.div_ceil(scale);
        let want_h = rect.h.div_ceil(scale);
        if map.width() != want_w || map.height() != want_h {
            return Err(FoiError::DimensionMismatch(format!(
                "tile at ({}, {}) is {}x{}, expected {}x{} at scale {}",
                origin.0,
                origin.1,
                map.width(),
                map.height(),
                want_w,
                want_h,
                scale
            )));
        }
        mpp.get_or_insert(map.microns_per_pixel());

        let gx_lo = rect.x / scale;
        let gx_hi = (rect.right() - 1) / scale;
        let gy_lo = rect.y / scale;
        let gy_hi = (rect.bottom() - 1) / scale;
        for gy in gy_lo..=gy_hi.min(out_h - 1) {
            let py = (gy * scale + scale / 2).min(full_height - 1);
            if py < rect.y || py >= rect.bottom() {
                continue;
            }
            for gx in gx_lo..=gx_hi.min(out_w - 1) {
                let px = (gx * scale + scale / 2).min(full_width - 1);
                if px < rect.x || px >= rect.right() {
                    continue;
                }
                let d = (px - rect.x)
                    .min(rect.right() - 1 - px)
                    .min(py - rect.y)
                    .min(rect.bottom() - 1 - py) as i64;
                let idx = gy * out_w + gx;
                if d > best[idx] {
                    best[idx] = d;
                    values[idx] = map.get((px - rect.x) / scale, (py - rect.y) / scale);
                }
            }
        }
    }
    debug_assert!(
        best.iter().all(|&d| d > i64::MIN),
        "tile grid must cover the plane"
    );
    ImagePlane::from_values(out_w, out_h, mpp.unwrap_or(1.0), values)
}

/// Nearest-neighbor resampling, used to align the low-resolution valid mask
/// with the density grid.
pub fn resample_nearest<T: Copy>(
    plane: &ImagePlane<T>,
    new_width: usize,
    new_height: usize,
) -> Result<ImagePlane<T>> {
    if new_width < 1 || new_height < 1 {
        return Err(FoiError::InvalidParameter(
            "resample target must be >= 1x1".into(),
        ));
    }
    let mut values = Vec::with_capacity(new_width * new_height);
    for y in 0..new_height {
        let sy = (y * plane.height()) / new_height;
        for x in 0..new_width {
            let sx = (x * plane.width()) / new_width;
            values.push(plane.get(sx, sy));
        }
    }
    let mpp = plane.microns_per_pixel() * plane.width() as f64 / new_width as f64;
    ImagePlane::from_values(new_width, new_height, mpp, values)
}
