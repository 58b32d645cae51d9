//! The five pipeline commands. Each one reads its inputs from the paths in
//! the run configuration, writes data products into the output directory,
//! and logs progress to standard error only.

use std::fs;
use std::path::Path;

use serde::Serialize;

use foi_core::annotations::{consensus_mitoses, load_annotations, save_annotations, AnnotationSet};
use foi_core::pipeline::{
    compute_valid_mask, detect_stitched, detect_stitched_external, run_evaluate, run_propose,
    DetectorInput,
};
use foi_core::raster::io::{load_rgb, save_mask, save_rgb, write_foim};
use foi_core::raster::{Rect, RgbRaster};
use foi_core::synth::{gen_mitoses, gen_tissue};

use crate::config::{DetectorKindConfig, RunConfig};
use crate::CliFailure;

fn ensure_dir(path: &Path) -> Result<(), CliFailure> {
    fs::create_dir_all(path)
        .map_err(|e| CliFailure::Pipeline(format!("cannot create {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliFailure> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliFailure::Pipeline(format!("{}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliFailure::Pipeline(format!("{}: {e}", path.display())))
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<(), CliFailure> {
    let sc = cfg.synth_config();
    let (rgb, tissue) = gen_tissue(&sc)?;
    let set = gen_mitoses(&sc, &tissue)?;

    for path in [&cfg.paths.slide, &cfg.paths.annotations] {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                ensure_dir(parent)?;
            }
        }
    }
    ensure_dir(&cfg.paths.out_dir)?;
    save_rgb(&cfg.paths.slide, &rgb)?;
    save_annotations(&cfg.paths.annotations, &set)?;
    save_mask(&cfg.paths.out_dir.join("tissue_ref.pgm"), &tissue)?;
    log::info!(
        "synthesized {} ({}x{}, {} annotations)",
        cfg.paths.slide.display(),
        rgb.width(),
        rgb.height(),
        set.annotations.len()
    );
    Ok(())
}

struct SlideBundle {
    rgb: RgbRaster,
    set: Option<AnnotationSet>,
}

fn load_bundle(cfg: &RunConfig, require_annotations: bool) -> Result<SlideBundle, CliFailure> {
    let set = if cfg.paths.annotations.exists() {
        Some(load_annotations(&cfg.paths.annotations)?)
    } else if require_annotations {
        return Err(CliFailure::MissingInput(format!(
            "annotation file {}",
            cfg.paths.annotations.display()
        )));
    } else {
        None
    };

    if !cfg.paths.slide.exists() {
        return Err(CliFailure::MissingInput(format!(
            "slide raster {}",
            cfg.paths.slide.display()
        )));
    }
    let mpp =
        match (cfg.paths.microns_per_pixel, set.as_ref()) {
            (Some(explicit), Some(s)) => {
                if (explicit - s.microns_per_pixel).abs() > 1e-9 * explicit.abs() {
                    return Err(CliFailure::Config(format!(
                    "paths.microns_per_pixel ({explicit}) disagrees with the annotation file ({})",
                    s.microns_per_pixel
                )));
                }
                explicit
            }
            (Some(explicit), None) => explicit,
            (None, Some(s)) => s.microns_per_pixel,
            (None, None) => return Err(CliFailure::Config(
                "slide resolution unknown: provide an annotation file or paths.microns_per_pixel"
                    .into(),
            )),
        };
    if mpp <= 0.0 || !mpp.is_finite() {
        return Err(CliFailure::Config(format!(
            "paths.microns_per_pixel must be positive, got {mpp}"
        )));
    }
    let rgb = load_rgb(&cfg.paths.slide, mpp)?;
    if let Some(s) = &set {
        if s.width as usize != rgb.width() || s.height as usize != rgb.height() {
            return Err(CliFailure::Pipeline(format!(
                "slide raster {}x{} does not match annotated geometry {}x{}",
                rgb.width(),
                rgb.height(),
                s.width,
                s.height
            )));
        }
    }
    Ok(SlideBundle { rgb, set })
}

/// Resolves the detector and whether it needs annotations to run.
fn detector_input(cfg: &RunConfig) -> Result<(DetectorInput, bool), CliFailure> {
    match cfg.detector.kind {
        DetectorKindConfig::Oracle | DetectorKindConfig::Noisy => {
            Ok((DetectorInput::Simulated(cfg.detector_spec()?), true))
        }
        DetectorKindConfig::External => {
            let dir = cfg.detector.tiles_dir.clone().ok_or_else(|| {
                CliFailure::Config("detector.tiles_dir is required for kind = external".into())
            })?;
            if !dir.is_dir() {
                return Err(CliFailure::MissingInput(format!(
                    "tile directory {}",
                    dir.display()
                )));
            }
            Ok((
                DetectorInput::External {
                    dir,
                    disc_radius_px: cfg.detector.disc_radius_px,
                },
                false,
            ))
        }
    }
}

fn placeholder_set(cfg: &RunConfig, rgb: &RgbRaster) -> AnnotationSet {
    let slide_id = cfg
        .paths
        .slide
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "slide".into());
    AnnotationSet {
        slide_id,
        microns_per_pixel: rgb.microns_per_pixel(),
        width: rgb.width() as u32,
        height: rgb.height() as u32,
        annotations: Vec::new(),
    }
}

#[derive(Serialize)]
struct MaskMeta {
    otsu_threshold: u8,
    coverage_threshold: f64,
    se_radius: usize,
    downsample_factor: usize,
}

pub fn cmd_mask(cfg: &RunConfig) -> Result<(), CliFailure> {
    let bundle = load_bundle(cfg, false)?;
    let params = cfg.pipeline_params();
    let artifacts = compute_valid_mask(&bundle.rgb, &params)?;

    ensure_dir(&cfg.paths.out_dir)?;
    let mask_path = cfg.paths.out_dir.join("valid_mask.pgm");
    save_mask(&mask_path, &artifacts.mask)?;
    write_json(
        &cfg.paths.out_dir.join("mask_meta.json"),
        &MaskMeta {
            otsu_threshold: artifacts.otsu_threshold,
            coverage_threshold: params.coverage_threshold,
            se_radius: params.se_radius,
            downsample_factor: params.mask_downsample,
        },
    )?;
    log::info!("wrote {}", mask_path.display());
    Ok(())
}

pub fn cmd_detect(cfg: &RunConfig) -> Result<(), CliFailure> {
    let (input, needs_annotations) = detector_input(cfg)?;
    let bundle = load_bundle(cfg, needs_annotations)?;
    let slide = bundle.rgb.geometry();

    let seg = match &input {
        DetectorInput::Simulated(spec) => {
            let set = bundle
                .set
                .as_ref()
                .expect("simulated detectors require annotations");
            let points = consensus_mitoses(set);
            detect_stitched(
                &slide,
                &points,
                spec,
                &cfg.pipeline_params().tiling,
                cfg.seed,
            )?
        }
        DetectorInput::External { dir, .. } => {
            detect_stitched_external(&slide, dir, &cfg.pipeline_params().tiling)?
        }
    };

    ensure_dir(&cfg.paths.out_dir)?;
    let map_path = cfg.paths.out_dir.join("mitosis_map.foim");
    write_foim(&map_path, &seg)?;
    log::info!(
        "wrote {} ({}x{})",
        map_path.display(),
        seg.width(),
        seg.height()
    );
    Ok(())
}

#[derive(Serialize)]
struct WindowRecord {
    area_mm2: f64,
    w_px: usize,
    h_px: usize,
}

#[derive(Serialize)]
struct ProposalRecord<'a> {
    slide_id: &'a str,
    rect: Rect,
    estimated_mc: f64,
    gt_mc: Option<u32>,
    window: WindowRecord,
    detector: &'a str,
}

pub fn cmd_propose(cfg: &RunConfig) -> Result<(), CliFailure> {
    let (input, needs_annotations) = detector_input(cfg)?;
    let bundle = load_bundle(cfg, needs_annotations)?;
    let params = cfg.pipeline_params();

    let (set, has_ground_truth) = match bundle.set {
        Some(set) => (set, true),
        None => (placeholder_set(cfg, &bundle.rgb), false),
    };
    let artifacts = run_propose(&bundle.rgb, &set, &input, &params, cfg.seed)?;
    let (w_px, h_px) = params.window.dims_at(set.microns_per_pixel)?;

    ensure_dir(&cfg.paths.out_dir)?;
    let record = ProposalRecord {
        slide_id: &set.slide_id,
        rect: artifacts.proposal.rect,
        estimated_mc: artifacts.proposal.estimated_mc,
        gt_mc: if has_ground_truth {
            artifacts.proposal.gt_mc
        } else {
            None
        },
        window: WindowRecord {
            area_mm2: params.window.area_mm2,
            w_px,
            h_px,
        },
        detector: input.label(),
    };
    let path = cfg.paths.out_dir.join("proposal.json");
    write_json(&path, &record)?;
    log::info!(
        "proposed rect ({}, {}) {}x{} with estimated MC {:.2}",
        record.rect.x,
        record.rect.y,
        record.rect.w,
        record.rect.h,
        record.estimated_mc
    );
    Ok(())
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<(), CliFailure> {
    let (input, _) = detector_input(cfg)?;
    let bundle = load_bundle(cfg, true)?;
    let set = bundle.set.as_ref().expect("evaluate requires annotations");
    let params = cfg.pipeline_params();

    let result = run_evaluate(&bundle.rgb, set, &input, &params, cfg.seed)?;
    ensure_dir(&cfg.paths.out_dir)?;
    let json_path = cfg.paths.out_dir.join("report.json");
    let csv_path = cfg.paths.out_dir.join("scatter.csv");
    foi_core::eval::emit_report(
        std::slice::from_ref(&result.report),
        &result.scatter,
        &json_path,
        &csv_path,
    )?;
    log::info!(
        "evaluated {}: pearson {:?}, proposal rank {:.3}",
        set.slide_id,
        result.report.pearson_r,
        result.report.proposal_rank
    );
    Ok(())
}
