//! Composition of the full proposal pipeline: tiled detection and
//! stitching, density estimation, tissue masking, the field-of-interest
//! proposal, and grid evaluation against ground truth.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::{
    consensus_mitoses, count_points_in_rect, gt_mc_map_on_grid, AnnotationSet,
};
use crate::density::{
    estimate_mc_map, propose_foi, sample_on_grid, DensityMap, EvalGrid, FoiProposal, FoiWindow,
};
use crate::detector::{
    load_external_tile, noisy_detect, oracle_detect, tile_seed, DetectorKind, DetectorSpec, SegMap,
};
use crate::error::{FoiError, Result};
use crate::eval::{evaluate_slide, scatter_rows, ScatterRow, SlideReport};
use crate::raster::{make_tile_grid, resample_nearest, stitch_to_scale, RgbRaster, SlideGeometry};
use crate::tissue_mask::{histogram, otsu_threshold, valid_mask, BinaryMask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TilingParams {
    pub tile_size: usize,
    pub margin: usize,
}

impl Default for TilingParams {
    fn default() -> Self {
        TilingParams {
            tile_size: 512,
            margin: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub tiling: TilingParams,
    /// Downsampling factor of the tissue-mask path (low magnification).
    pub mask_downsample: usize,
    /// Working downsampling factor of the density path.
    pub density_downsample: usize,
    pub coverage_threshold: f64,
    pub se_radius: usize,
    /// Evaluation-grid stride in full-resolution pixels.
    pub grid_stride: usize,
    pub window: FoiWindow,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            tiling: TilingParams::default(),
            mask_downsample: 32,
            density_downsample: 16,
            coverage_threshold: 0.95,
            se_radius: 2,
            grid_stride: 256,
            window: FoiWindow::default(),
        }
    }
}

/// Where per-tile segmentation maps come from.
#[derive(Debug, Clone)]
pub enum DetectorInput {
    /// Simulated detector (oracle or noisy).
    Simulated(DetectorSpec),
    /// Externally produced `tile_{x}_{y}.foim` maps.
    External { dir: PathBuf, disc_radius_px: f64 },
}

impl DetectorInput {
    pub fn disc_radius_px(&self) -> f64 {
        match self {
            DetectorInput::Simulated(spec) => spec.disc_radius_px,
            DetectorInput::External { disc_radius_px, .. } => *disc_radius_px,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            DetectorInput::Simulated(spec) => match spec.kind {
                DetectorKind::Oracle => "oracle",
                DetectorKind::Noisy => "noisy",
            },
            DetectorInput::External { .. } => "external",
        }
    }
}

/// Runs the simulated detector over the tile grid (in parallel; the result
/// does not depend on completion order) and stitches the per-tile maps into
/// the slide-wide mitosis map M.
pub fn detect_stitched(
    slide: &SlideGeometry,
    points: &[(u32, u32)],
    spec: &DetectorSpec,
    tiling: &TilingParams,
    global_seed: u64,
) -> Result<SegMap> {
    spec.validate()?;
    let grid = make_tile_grid(slide.width, slide.height, tiling.tile_size, tiling.margin)?;
    let tiles: Result<Vec<_>> = grid
        .origins_indexed()
        .into_par_iter()
        .map(|((i, j), origin)| {
            let rect = grid.tile_rect(origin, slide.width, slide.height);
            let map = match spec.kind {
                DetectorKind::Oracle => oracle_detect(rect, points, spec, slide.microns_per_pixel)?,
                DetectorKind::Noisy => noisy_detect(
                    rect,
                    points,
                    spec,
                    slide.microns_per_pixel,
                    tile_seed(global_seed, i, j),
                )?,
            };
            Ok((origin, map))
        })
        .collect();
    stitch_to_scale(&tiles?, &grid, slide.width, slide.height, spec.output_scale)
}

/// Stitches externally produced per-tile FOIM maps. The output scale is
/// inferred from the first tile's dimensions.
pub fn detect_stitched_external(
    slide: &SlideGeometry,
    dir: &Path,
    tiling: &TilingParams,
) -> Result<SegMap> {
    let grid = make_tile_grid(slide.width, slide.height, tiling.tile_size, tiling.margin)?;
    let origins = grid.origins();
    let mut tiles = Vec::with_capacity(origins.len());
    for origin in origins {
        tiles.push((origin, load_external_tile(dir, origin)?));
    }
    let first_rect = grid.tile_rect(tiles[0].0, slide.width, slide.height);
    let scale = first_rect.w.div_ceil(tiles[0].1.width()).max(1);
    stitch_to_scale(&tiles, &grid, slide.width, slide.height, scale)
}

/// Brings a stitched segmentation map to the working density scale and
/// converts disc mass to counts.
pub fn density_from_seg(
    seg: &SegMap,
    slide: &SlideGeometry,
    window: &FoiWindow,
    disc_radius_px: f64,
    density_downsample: usize,
) -> Result<DensityMap> {
    let ratio = seg.microns_per_pixel() / slide.microns_per_pixel;
    let seg_scale = ratio.round();
    if !seg_scale.is_finite() || seg_scale < 1.0 || (ratio - seg_scale).abs() > 1e-6 * seg_scale {
        return Err(FoiError::InvalidParameter(format!(
            "segmentation map scale {ratio} is not an integer multiple of full resolution"
        )));
    }
    let seg_scale = seg_scale as usize;
    if !density_downsample.is_multiple_of(seg_scale) {
        return Err(FoiError::InvalidParameter(format!(
            "density downsample {density_downsample} must be a multiple of the map scale {seg_scale}"
        )));
    }
    let extra = density_downsample / seg_scale;
    let working = if extra == 1 {
        seg.clone()
    } else {
        seg.downsample(extra)?
    };
    estimate_mc_map(&working, window, disc_radius_px / density_downsample as f64)
}

#[derive(Debug, Clone)]
pub struct MaskArtifacts {
    pub mask: BinaryMask,
    pub otsu_threshold: u8,
}

/// The lower path of the pipeline: grayscale at low magnification, Otsu,
/// closing, 10-HPF coverage.
pub fn compute_valid_mask(rgb: &RgbRaster, params: &PipelineParams) -> Result<MaskArtifacts> {
    let lowres = rgb.grayscale().downsample(params.mask_downsample)?;
    let otsu = otsu_threshold(&histogram(&lowres))?;
    let mask = valid_mask(
        &lowres,
        &params.window,
        params.coverage_threshold,
        params.se_radius,
    )?;
    Ok(MaskArtifacts {
        mask,
        otsu_threshold: otsu,
    })
}

#[derive(Debug, Clone)]
pub struct ProposeArtifacts {
    pub seg: SegMap,
    pub density: DensityMap,
    pub valid_lowres: BinaryMask,
    pub otsu_threshold: u8,
    pub proposal: FoiProposal,
}

/// The full proposal pipeline for one slide.
pub fn run_propose(
    rgb: &RgbRaster,
    set: &AnnotationSet,
    detector: &DetectorInput,
    params: &PipelineParams,
    seed: u64,
) -> Result<ProposeArtifacts> {
    let slide = set.geometry();
    if rgb.width() != slide.width || rgb.height() != slide.height {
        return Err(FoiError::Validation(format!(
            "slide raster {}x{} does not match annotation geometry {}x{}",
            rgb.width(),
            rgb.height(),
            slide.width,
            slide.height
        )));
    }
    let consensus = consensus_mitoses(set);

    let seg = match detector {
        DetectorInput::Simulated(spec) => {
            detect_stitched(&slide, &consensus, spec, &params.tiling, seed)?
        }
        DetectorInput::External { dir, .. } => {
            detect_stitched_external(&slide, dir, &params.tiling)?
        }
    };
    let density = density_from_seg(
        &seg,
        &slide,
        &params.window,
        detector.disc_radius_px(),
        params.density_downsample,
    )?;

    let mask_artifacts = compute_valid_mask(rgb, params)?;
    let valid_on_density =
        resample_nearest(&mask_artifacts.mask, density.width(), density.height())?;

    let mut proposal = propose_foi(&density, &valid_on_density, &params.window, &slide)?;
    proposal.gt_mc = Some(count_points_in_rect(&consensus, &proposal.rect));

    Ok(ProposeArtifacts {
        seg,
        density,
        valid_lowres: mask_artifacts.mask,
        otsu_threshold: mask_artifacts.otsu_threshold,
        proposal,
    })
}

#[derive(Debug, Clone)]
pub struct EvaluateArtifacts {
    pub propose: ProposeArtifacts,
    pub report: SlideReport,
    pub scatter: Vec<ScatterRow>,
}

/// Proposal plus evaluation against ground truth on the shared grid.
pub fn run_evaluate(
    rgb: &RgbRaster,
    set: &AnnotationSet,
    detector: &DetectorInput,
    params: &PipelineParams,
    seed: u64,
) -> Result<EvaluateArtifacts> {
    let artifacts = run_propose(rgb, set, detector, params, seed)?;
    let slide = set.geometry();
    let consensus = consensus_mitoses(set);

    let (win_w, win_h) = params.window.dims_at(slide.microns_per_pixel)?;
    let grid = EvalGrid::new(slide.width, slide.height, win_w, win_h, params.grid_stride)?;
    let gt = gt_mc_map_on_grid(&consensus, &grid, slide.microns_per_pixel);
    let est = sample_on_grid(&artifacts.density, &grid, slide.microns_per_pixel)?;
    let valid = sample_on_grid(&artifacts.valid_lowres, &grid, slide.microns_per_pixel)?;

    let report = evaluate_slide(&est, &gt, &valid, &artifacts.proposal, &set.slide_id)?;
    let scatter = scatter_rows(&set.slide_id, &est, &gt, &valid)?;
    Ok(EvaluateArtifacts {
        propose: artifacts,
        report,
        scatter,
    })
}
