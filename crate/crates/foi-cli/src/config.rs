//! Run configuration: one JSON document covering every pipeline stage, with
//! per-key command-line overrides. Unknown keys are rejected so typos fail
//! loudly instead of silently running with defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use foi_core::density::FoiWindow;
use foi_core::detector::{DetectorKind, DetectorSpec, NoiseParams};
use foi_core::pipeline::{PipelineParams, TilingParams};
use foi_core::synth::SynthConfig;

use crate::CliFailure;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub pipeline: PipelineConfig,
    pub detector: DetectorConfig,
    pub synth: SynthParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub slide: PathBuf,
    pub annotations: PathBuf,
    pub out_dir: PathBuf,
    /// Resolution of the slide raster; only needed when no annotation file
    /// is available (external detectors on unannotated slides).
    pub microns_per_pixel: Option<f64>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            slide: PathBuf::from("out/slide.png"),
            annotations: PathBuf::from("out/annotations.json"),
            out_dir: PathBuf::from("out"),
            microns_per_pixel: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub tile_size: usize,
    pub margin: usize,
    pub mask_downsample: usize,
    pub density_downsample: usize,
    pub coverage_threshold: f64,
    pub se_radius: usize,
    pub grid_stride: usize,
    pub window: WindowConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let p = PipelineParams::default();
        PipelineConfig {
            tile_size: p.tiling.tile_size,
            margin: p.tiling.margin,
            mask_downsample: p.mask_downsample,
            density_downsample: p.density_downsample,
            coverage_threshold: p.coverage_threshold,
            se_radius: p.se_radius,
            grid_stride: p.grid_stride,
            window: WindowConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    pub area_mm2: f64,
    pub aspect_w: u32,
    pub aspect_h: u32,
}

impl Default for WindowConfig {
    fn default() -> Self {
        let w = FoiWindow::default();
        WindowConfig {
            area_mm2: w.area_mm2,
            aspect_w: w.aspect_w,
            aspect_h: w.aspect_h,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKindConfig {
    Oracle,
    Noisy,
    External,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub kind: DetectorKindConfig,
    pub disc_radius_px: f64,
    pub output_scale: usize,
    pub noise: NoiseConfig,
    /// Directory of `tile_{x}_{y}.foim` maps for `kind = external`.
    pub tiles_dir: Option<PathBuf>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        let s = DetectorSpec::default();
        DetectorConfig {
            kind: DetectorKindConfig::Oracle,
            disc_radius_px: s.disc_radius_px,
            output_scale: s.output_scale,
            noise: NoiseConfig::default(),
            tiles_dir: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub fp_rate_per_mm2: f64,
    pub miss_prob: f64,
    pub gain: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        let n = NoiseParams::default();
        NoiseConfig {
            fp_rate_per_mm2: n.fp_rate_per_mm2,
            miss_prob: n.miss_prob,
            gain: n.gain,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub width: usize,
    pub height: usize,
    pub microns_per_pixel: f64,
    pub tissue_fill: f64,
    pub cluster_intensity: f64,
    pub offspring_mean: f64,
    pub cluster_sigma_um: f64,
    pub distractor_fraction: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        let s = SynthConfig::default();
        SynthParams {
            width: s.width,
            height: s.height,
            microns_per_pixel: s.microns_per_pixel,
            tissue_fill: s.tissue_fill,
            cluster_intensity: s.cluster_intensity,
            offspring_mean: s.offspring_mean,
            cluster_sigma_um: s.cluster_sigma_um,
            distractor_fraction: s.distractor_fraction,
        }
    }
}

impl RunConfig {
    pub fn pipeline_params(&self) -> PipelineParams {
        PipelineParams {
            tiling: TilingParams {
                tile_size: self.pipeline.tile_size,
                margin: self.pipeline.margin,
            },
            mask_downsample: self.pipeline.mask_downsample,
            density_downsample: self.pipeline.density_downsample,
            coverage_threshold: self.pipeline.coverage_threshold,
            se_radius: self.pipeline.se_radius,
            grid_stride: self.pipeline.grid_stride,
            window: FoiWindow {
                area_mm2: self.pipeline.window.area_mm2,
                aspect_w: self.pipeline.window.aspect_w,
                aspect_h: self.pipeline.window.aspect_h,
            },
        }
    }

    pub fn detector_spec(&self) -> Result<DetectorSpec, CliFailure> {
        let kind = match self.detector.kind {
            DetectorKindConfig::Oracle => DetectorKind::Oracle,
            DetectorKindConfig::Noisy => DetectorKind::Noisy,
            DetectorKindConfig::External => {
                return Err(CliFailure::Config(
                    "external detector has no simulated spec; use detector.tiles_dir".into(),
                ))
            }
        };
        Ok(DetectorSpec {
            kind,
            disc_radius_px: self.detector.disc_radius_px,
            output_scale: self.detector.output_scale,
            noise: NoiseParams {
                fp_rate_per_mm2: self.detector.noise.fp_rate_per_mm2,
                miss_prob: self.detector.noise.miss_prob,
                gain: self.detector.noise.gain,
            },
        })
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            width: self.synth.width,
            height: self.synth.height,
            microns_per_pixel: self.synth.microns_per_pixel,
            tissue_fill: self.synth.tissue_fill,
            cluster_intensity: self.synth.cluster_intensity,
            offspring_mean: self.synth.offspring_mean,
            cluster_sigma_um: self.synth.cluster_sigma_um,
            distractor_fraction: self.synth.distractor_fraction,
            seed: self.seed,
        }
    }
}

/// Loads the config file (or starts from defaults), applies `--set` and
/// `--out` overrides, and parses into the typed configuration.
pub fn load_config(
    path: Option<&Path>,
    sets: &[String],
    out_override: Option<&Path>,
) -> Result<RunConfig, CliFailure> {
    let mut value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                if e.kind() == std::io::ErrorKind::NotFound {
                    CliFailure::MissingInput(format!("config file {}", p.display()))
                } else {
                    CliFailure::Config(format!("{}: {e}", p.display()))
                }
            })?;
            serde_json::from_str(&text)
                .map_err(|e| CliFailure::Config(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(serde_json::Map::new()),
    };
    apply_overrides(&mut value, sets)?;
    let mut config: RunConfig =
        serde_json::from_value(value).map_err(|e| CliFailure::Config(e.to_string()))?;
    if let Some(out) = out_override {
        config.paths.out_dir = out.to_path_buf();
    }
    Ok(config)
}

/// Applies `key.path=value` overrides onto the raw JSON document. Values
/// parse as JSON where possible and fall back to strings.
fn apply_overrides(value: &mut Value, sets: &[String]) -> Result<(), CliFailure> {
    for entry in sets {
        let (key, raw) = entry
            .split_once('=')
            .ok_or_else(|| CliFailure::Config(format!("--set expects KEY=VALUE, got '{entry}'")))?;
        let parsed: Value =
            serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut cursor = &mut *value;
        let parts: Vec<&str> = key.split('.').collect();
        for part in &parts[..parts.len() - 1] {
            let obj = cursor.as_object_mut().ok_or_else(|| {
                CliFailure::Config(format!("--set {key}: '{part}' is not an object"))
            })?;
            cursor = obj
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Default::default()));
        }
        let obj = cursor
            .as_object_mut()
            .ok_or_else(|| CliFailure::Config(format!("--set {key}: parent is not an object")))?;
        obj.insert(parts[parts.len() - 1].to_string(), parsed);
    }
    Ok(())
}
