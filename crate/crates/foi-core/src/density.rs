//! Mitotic-density estimation: 10-HPF window geometry, summed-area-table
//! box filtering, mass-to-count conversion, and the masked-argmax field of
//! interest proposal.

use serde::{Deserialize, Serialize};

use crate::error::{FoiError, Result};
use crate::raster::{round_half_up, ImagePlane, Rect, SlideGeometry};
use crate::tissue_mask::BinaryMask;

/// Window sums of the mitosis map; the value at each position is the
/// estimated mitotic count of the window centered there. Positions whose
/// window exits the plane carry NaN and are excluded from the argmax,
/// reports and correlation.
pub type DensityMap = ImagePlane<f64>;

/// The physical 10-HPF evaluation window. Pixel dimensions are derived per
/// resolution via [`FoiWindow::dims_at`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoiWindow {
    pub area_mm2: f64,
    pub aspect_w: u32,
    pub aspect_h: u32,
}

impl Default for FoiWindow {
    fn default() -> Self {
        FoiWindow {
            area_mm2: 2.37,
            aspect_w: 4,
            aspect_h: 3,
        }
    }
}

impl FoiWindow {
    pub fn new(area_mm2: f64, aspect_w: u32, aspect_h: u32) -> Result<FoiWindow> {
        if area_mm2 <= 0.0 || !area_mm2.is_finite() {
            return Err(FoiError::InvalidParameter(format!(
                "window area must be positive, got {area_mm2}"
            )));
        }
        if aspect_w == 0 || aspect_h == 0 {
            return Err(FoiError::InvalidParameter(
                "aspect ratio terms must be positive".into(),
            ));
        }
        Ok(FoiWindow {
            area_mm2,
            aspect_w,
            aspect_h,
        })
    }

    /// Pixel dimensions `(w, h)` of the window at the given resolution.
    ///
    /// The height is fixed from `sqrt(area * aspect_h / aspect_w)` and the
    /// width follows the aspect ratio, so the aspect stays within one pixel
    /// of rounding and the realized area within 0.5% of nominal at
    /// micron-scale resolutions (rounding dominates on very coarse grids).
    pub fn dims_at(&self, microns_per_pixel: f64) -> Result<(usize, usize)> {
        if microns_per_pixel <= 0.0 || !microns_per_pixel.is_finite() {
            return Err(FoiError::InvalidParameter(format!(
                "microns_per_pixel must be positive, got {microns_per_pixel}"
            )));
        }
        let h_um = (self.area_mm2 * self.aspect_h as f64 / self.aspect_w as f64).sqrt() * 1000.0;
        let h_px = round_half_up(h_um / microns_per_pixel).max(1.0);
        let w_px = round_half_up(h_px * self.aspect_w as f64 / self.aspect_h as f64).max(1.0);
        Ok((w_px as usize, h_px as usize))
    }
}

/// Evaluation lattice: window centers sampled every `stride` full-resolution
/// pixels, keeping only windows that lie fully inside the slide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalGrid {
    win_w: usize,
    win_h: usize,
    stride: usize,
    nx: usize,
    ny: usize,
}

impl EvalGrid {
    pub fn new(
        slide_w: usize,
        slide_h: usize,
        win_w: usize,
        win_h: usize,
        stride: usize,
    ) -> Result<EvalGrid> {
        if stride < 1 {
            return Err(FoiError::InvalidParameter(
                "grid stride must be >= 1".into(),
            ));
        }
        if win_w < 1 || win_h < 1 {
            return Err(FoiError::InvalidParameter(
                "window dimensions must be >= 1".into(),
            ));
        }
        if win_w > slide_w || win_h > slide_h {
            return Err(FoiError::Geometry(format!(
                "window {win_w}x{win_h} does not fit inside slide {slide_w}x{slide_h}"
            )));
        }
        Ok(EvalGrid {
            win_w,
            win_h,
            stride,
            nx: (slide_w - win_w) / stride + 1,
            ny: (slide_h - win_h) / stride + 1,
        })
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn window_dims(&self) -> (usize, usize) {
        (self.win_w, self.win_h)
    }

    /// Full-resolution center of grid position `(i, j)`.
    pub fn center(&self, i: usize, j: usize) -> (usize, usize) {
        (
            self.win_w / 2 + i * self.stride,
            self.win_h / 2 + j * self.stride,
        )
    }

    /// The window rectangle at grid position `(i, j)`.
    pub fn rect(&self, i: usize, j: usize) -> Rect {
        Rect::new(i * self.stride, j * self.stride, self.win_w, self.win_h)
    }
}

/// Sliding-window sum over all fully-contained `win_w` x `win_h` windows,
/// computed through a summed-area table (O(1) per position). Windows are
/// centered; positions whose window exits the plane carry NaN.
pub fn box_sum<T: Copy + Into<f64>>(
    map: &ImagePlane<T>,
    win_w: usize,
    win_h: usize,
) -> Result<DensityMap> {
    let (w, h) = (map.width(), map.height());
    if win_w < 1 || win_h < 1 {
        return Err(FoiError::InvalidParameter(
            "window dimensions must be >= 1".into(),
        ));
    }
    if win_w > w || win_h > h {
        return Err(FoiError::Geometry(format!(
            "window {win_w}x{win_h} larger than map {w}x{h}"
        )));
    }

    // Integer-valued inputs stay exact: sums are far below 2^53.
    let stride = w + 1;
    let mut sat = vec![0.0f64; stride * (h + 1)];
    for y in 0..h {
        let mut row_sum = 0.0f64;
        for x in 0..w {
            row_sum += map.get(x, y).into();
            sat[(y + 1) * stride + x + 1] = sat[y * stride + x + 1] + row_sum;
        }
    }

    let half_w = (win_w / 2) as i64;
    let half_h = (win_h / 2) as i64;
    let mut values = Vec::with_capacity(w * h);
    for y in 0..h {
        let y0 = y as i64 - half_h;
        for x in 0..w {
            let x0 = x as i64 - half_w;
            if x0 < 0 || y0 < 0 || x0 + win_w as i64 > w as i64 || y0 + win_h as i64 > h as i64 {
                values.push(f64::NAN);
                continue;
            }
            let (x0, y0) = (x0 as usize, y0 as usize);
            let (x1, y1) = (x0 + win_w, y0 + win_h);
            values.push(
                sat[y1 * stride + x1] - sat[y0 * stride + x1] - sat[y1 * stride + x0]
                    + sat[y0 * stride + x0],
            );
        }
    }
    ImagePlane::from_values(w, h, map.microns_per_pixel(), values)
}

/// Converts a segmentation map into a mitotic-count map: window sums divided
/// by the nominal single-figure mass pi*r^2, so a detector emitting one full
/// disc per figure yields approximately one count per figure.
///
/// `disc_radius` is expressed in the segmentation map's own pixel units.
pub fn estimate_mc_map(
    seg_map: &ImagePlane<f32>,
    window: &FoiWindow,
    disc_radius: f64,
) -> Result<DensityMap> {
    if !disc_radius.is_finite() || disc_radius < 1.0 {
        return Err(FoiError::InvalidParameter(format!(
            "disc radius must be >= 1 px at the map scale, got {disc_radius}"
        )));
    }
    let (win_w, win_h) = window.dims_at(seg_map.microns_per_pixel())?;
    let sums = box_sum(seg_map, win_w, win_h)?;
    let mass = std::f64::consts::PI * disc_radius * disc_radius;
    Ok(sums.map(|v| v / mass))
}

/// A proposed field of interest at full resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoiProposal {
    pub rect: Rect,
    pub estimated_mc: f64,
    pub gt_mc: Option<u32>,
}

/// Argmax of the density map restricted to valid positions, realized as a
/// full-resolution window rectangle.
///
/// `mc_map` and `valid` must share dimensions (the valid mask is aligned to
/// the density grid beforehand). Ties break to the row-major first
/// occurrence; NaN (undefined border) positions never win.
pub fn propose_foi(
    mc_map: &DensityMap,
    valid: &BinaryMask,
    window: &FoiWindow,
    slide: &SlideGeometry,
) -> Result<FoiProposal> {
    if !mc_map.same_dims(valid) {
        return Err(FoiError::DimensionMismatch(format!(
            "density map {}x{} vs valid mask {}x{}",
            mc_map.width(),
            mc_map.height(),
            valid.width(),
            valid.height()
        )));
    }
    let ratio = mc_map.microns_per_pixel() / slide.microns_per_pixel;
    let scale = ratio.round();
    if !scale.is_finite() || scale < 1.0 || (ratio - scale).abs() > 1e-6 * scale {
        return Err(FoiError::InvalidParameter(format!(
            "density grid resolution must be an integer multiple of the slide's, got ratio {ratio}"
        )));
    }
    let scale = scale as usize;

    let mut best: Option<(usize, usize, f64)> = None;
    for y in 0..mc_map.height() {
        for x in 0..mc_map.width() {
            if valid.get(x, y) == 0 {
                continue;
            }
            let v = mc_map.get(x, y);
            if v.is_nan() {
                continue;
            }
            if best.is_none_or(|(_, _, bv)| v > bv) {
                best = Some((x, y, v));
            }
        }
    }
    let (bx, by, value) = best.ok_or(FoiError::EmptyValidMask)?;

    let (win_w, win_h) = window.dims_at(slide.microns_per_pixel)?;
    if win_w > slide.width || win_h > slide.height {
        return Err(FoiError::Geometry(format!(
            "window {win_w}x{win_h} does not fit inside slide {}x{}",
            slide.width, slide.height
        )));
    }
    let cx = bx * scale + scale / 2;
    let cy = by * scale + scale / 2;
    let x = (cx as i64 - (win_w / 2) as i64).clamp(0, (slide.width - win_w) as i64) as usize;
    let y = (cy as i64 - (win_h / 2) as i64).clamp(0, (slide.height - win_h) as i64) as usize;
    Ok(FoiProposal {
        rect: Rect::new(x, y, win_w, win_h),
        estimated_mc: value,
        gt_mc: None,
    })
}

/// Samples a map at the evaluation grid centers (nearest cell), yielding an
/// `nx` x `ny` plane aligned with [`crate::annotations::gt_mc_map_on_grid`].
pub fn sample_on_grid<T: Copy>(
    map: &ImagePlane<T>,
    grid: &EvalGrid,
    full_microns_per_pixel: f64,
) -> Result<ImagePlane<T>> {
    let scale = map.microns_per_pixel() / full_microns_per_pixel;
    if scale <= 0.0 || !scale.is_finite() {
        return Err(FoiError::InvalidParameter(format!(
            "cannot relate map resolution {} to slide resolution {}",
            map.microns_per_pixel(),
            full_microns_per_pixel
        )));
    }
    let mut values = Vec::with_capacity(grid.nx() * grid.ny());
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            let (cx, cy) = grid.center(i, j);
            let sx = ((cx as f64 / scale) as usize).min(map.width() - 1);
            let sy = ((cy as f64 / scale) as usize).min(map.height() - 1);
            values.push(map.get(sx, sy));
        }
    }
    ImagePlane::from_values(
        grid.nx(),
        grid.ny(),
        full_microns_per_pixel * grid.stride() as f64,
        values,
    )
}
