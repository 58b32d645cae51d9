//! Point annotations of cells, the two-expert consensus rule, and
//! ground-truth mitotic-count maps.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::density::{EvalGrid, FoiWindow};
use crate::error::{FoiError, Result};
use crate::raster::{ImagePlane, Rect, SlideGeometry};

/// Ground-truth mitotic count of the window centered at each grid position.
pub type McMap = ImagePlane<u32>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellClass {
    Mitosis,
    MitosisLike,
    Granulocyte,
    Other,
}

/// One annotated cell. Coordinates are full-resolution pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub x: u32,
    pub y: u32,
    #[serde(rename = "class")]
    pub cell_class: CellClass,
    #[serde(rename = "expert1")]
    pub expert1_mitosis: bool,
    #[serde(rename = "expert2")]
    pub expert2_mitosis: bool,
}

/// All annotations of one slide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationSet {
    pub slide_id: String,
    pub microns_per_pixel: f64,
    pub width: u32,
    pub height: u32,
    pub annotations: Vec<Annotation>,
}

impl AnnotationSet {
    pub fn geometry(&self) -> SlideGeometry {
        SlideGeometry {
            width: self.width as usize,
            height: self.height as usize,
            microns_per_pixel: self.microns_per_pixel,
        }
    }

    /// Checks slide geometry, point bounds (exclusive at width/height) and
    /// the mitosis-like labeling rule. Reports the first offending index.
    pub fn validate(&self) -> Result<()> {
        if self.width < 1 || self.height < 1 {
            return Err(FoiError::Validation(format!(
                "slide dimensions must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        if self.microns_per_pixel <= 0.0 || !self.microns_per_pixel.is_finite() {
            return Err(FoiError::Validation(format!(
                "microns_per_pixel must be positive, got {}",
                self.microns_per_pixel
            )));
        }
        for (idx, a) in self.annotations.iter().enumerate() {
            if a.x >= self.width || a.y >= self.height {
                return Err(FoiError::Validation(format!(
                    "annotation {idx}: point ({}, {}) outside slide {}x{}",
                    a.x, a.y, self.width, self.height
                )));
            }
            if a.cell_class == CellClass::MitosisLike && a.expert1_mitosis && a.expert2_mitosis {
                return Err(FoiError::Validation(format!(
                    "annotation {idx}: mitosis_like cannot carry agreement from both experts"
                )));
            }
        }
        Ok(())
    }
}

/// Loads and validates an annotation set from its JSON file.
pub fn load_annotations(path: &Path) -> Result<AnnotationSet> {
    let text = std::fs::read_to_string(path).map_err(|e| FoiError::io(path, e))?;
    let set: AnnotationSet = serde_json::from_str(&text)
        .map_err(|e| FoiError::Parse(format!("{}: {e}", path.display())))?;
    set.validate()?;
    Ok(set)
}

/// Writes an annotation set as pretty-printed JSON.
pub fn save_annotations(path: &Path, set: &AnnotationSet) -> Result<()> {
    let mut text = serde_json::to_string_pretty(set)
        .map_err(|e| FoiError::Parse(format!("{}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| FoiError::io(path, e))
}

/// The figures both experts agreed on: class `mitosis` with both expert
/// flags set. Order-preserving.
pub fn consensus_mitoses(set: &AnnotationSet) -> Vec<(u32, u32)> {
    set.annotations
        .iter()
        .filter(|a| a.cell_class == CellClass::Mitosis && a.expert1_mitosis && a.expert2_mitosis)
        .map(|a| (a.x, a.y))
        .collect()
}

/// Number of points inside `rect` (half-open membership).
pub fn count_points_in_rect(points: &[(u32, u32)], rect: &Rect) -> u32 {
    points
        .iter()
        .filter(|&&(x, y)| rect.contains_point(x as usize, y as usize))
        .count() as u32
}

/// Ground-truth mitotic-count map over the evaluation grid of `window`
/// centers sampled every `grid_stride` px (windows fully inside the slide).
pub fn gt_mc_map(
    points: &[(u32, u32)],
    window: &FoiWindow,
    slide: &SlideGeometry,
    grid_stride: usize,
) -> Result<McMap> {
    let (win_w, win_h) = window.dims_at(slide.microns_per_pixel)?;
    let grid = EvalGrid::new(slide.width, slide.height, win_w, win_h, grid_stride)?;
    Ok(gt_mc_map_on_grid(points, &grid, slide.microns_per_pixel))
}

/// [`gt_mc_map`] on a pre-built grid, so estimate and ground truth can share
/// one lattice. Points are bucketed by x through a sorted index rather than
/// the naive position-times-points scan.
pub fn gt_mc_map_on_grid(points: &[(u32, u32)], grid: &EvalGrid, microns_per_pixel: f64) -> McMap {
    let mut sorted: Vec<(u32, u32)> = points.to_vec();
    sorted.sort_unstable();
    let (win_w, win_h) = grid.window_dims();

    let mut values = vec![0u32; grid.nx() * grid.ny()];
    for i in 0..grid.nx() {
        let x0 = (i * grid.stride()) as u32;
        let x1 = x0 + win_w as u32;
        let lo = sorted.partition_point(|&(px, _)| px < x0);
        let hi = sorted.partition_point(|&(px, _)| px < x1);
        let column = &sorted[lo..hi];
        for j in 0..grid.ny() {
            let y0 = (j * grid.stride()) as u32;
            let y1 = y0 + win_h as u32;
            let count = column
                .iter()
                .filter(|&&(_, py)| py >= y0 && py < y1)
                .count() as u32;
            values[j * grid.nx() + i] = count;
        }
    }
    ImagePlane::from_values(
        grid.nx(),
        grid.ny(),
        microns_per_pixel * grid.stride() as f64,
        values,
    )
    .expect("grid dimensions are positive")
}
