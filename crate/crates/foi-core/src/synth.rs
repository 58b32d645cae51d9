//! Synthetic slides: a bright-background raster with an irregular dark
//! tissue blob, plus clustered (Thomas-process) mitotic-figure annotations,
//! so the full pipeline is verifiable at desk scale.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::annotations::{Annotation, AnnotationSet, CellClass};
use crate::detector::splitmix64;
use crate::error::{FoiError, Result};
use crate::raster::{GrayPlane, ImagePlane, RgbRaster};
use crate::tissue_mask::BinaryMask;

/// Tissue field is evaluated on this coarse lattice and upsampled; keeps the
/// blob boundary irregular at slide scale without a full-resolution field.
const FIELD_GRID: usize = 8;

const BACKGROUND_RGB: (u8, u8, u8) = (245, 243, 247);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub microns_per_pixel: f64,
    /// Fraction of the slide covered by tissue.
    pub tissue_fill: f64,
    /// Cluster parents per mm^2 of tissue.
    pub cluster_intensity: f64,
    /// Mean figures per cluster (Poisson).
    pub offspring_mean: f64,
    /// Isotropic Gaussian displacement of figures around their parent.
    pub cluster_sigma_um: f64,
    /// Fraction of figures relabeled to non-consensus classes so the
    /// consensus filter has something to reject.
    pub distractor_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 8192,
            height: 6144,
            microns_per_pixel: 1.0,
            tissue_fill: 0.55,
            cluster_intensity: 2.0,
            offspring_mean: 10.0,
            cluster_sigma_um: 150.0,
            distractor_fraction: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 1 || self.height < 1 {
            return Err(FoiError::InvalidParameter(format!(
                "slide dimensions must be >= 1, got {}x{}",
                self.width, self.height
            )));
        }
        if self.microns_per_pixel <= 0.0 || !self.microns_per_pixel.is_finite() {
            return Err(FoiError::InvalidParameter(
                "microns_per_pixel must be positive".into(),
            ));
        }
        for (name, v) in [
            ("tissue_fill", self.tissue_fill),
            ("distractor_fraction", self.distractor_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(FoiError::InvalidParameter(format!(
                    "{name} must be in [0, 1], got {v}"
                )));
            }
        }
        for (name, v) in [
            ("cluster_intensity", self.cluster_intensity),
            ("offspring_mean", self.offspring_mean),
            ("cluster_sigma_um", self.cluster_sigma_um),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(FoiError::InvalidParameter(format!(
                    "{name} must be >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Star-shaped blob: an ellipse matched to the slide aspect whose radius
/// wobbles with a few random harmonics, so the boundary is irregular but
/// the region stays contiguous.
struct BlobShape {
    cx: f64,
    cy: f64,
    inv_w: f64,
    inv_h: f64,
    harmonics: Vec<(f64, f64, f64)>, // (order, amplitude, phase)
}

impl BlobShape {
    fn sample(rng: &mut ChaCha8Rng, width: usize, height: usize) -> BlobShape {
        let cx = width as f64 * rng.random_range(0.45..0.55);
        let cy = height as f64 * rng.random_range(0.45..0.55);
        let harmonics = (2..=5)
            .map(|k| {
                (
                    k as f64,
                    rng.random_range(0.03..0.12),
                    rng.random_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        BlobShape {
            cx,
            cy,
            inv_w: 1.0 / width as f64,
            inv_h: 1.0 / height as f64,
            harmonics,
        }
    }

    /// Normalized distance from the blob center; smaller is deeper inside.
    fn score(&self, x: f64, y: f64) -> f64 {
        let dx = (x - self.cx) * self.inv_w;
        let dy = (y - self.cy) * self.inv_h;
        let theta = dy.atan2(dx);
        let wobble: f64 = self
            .harmonics
            .iter()
            .map(|&(k, a, p)| a * (k * theta + p).sin())
            .sum();
        (dx * dx + dy * dy).sqrt() / (1.0 + wobble)
    }
}

/// Generates the slide raster and the reference tissue mask.
///
/// The background is a constant bright tone; tissue is a dark textured blob
/// thresholded at the score quantile matching `tissue_fill`, so the measured
/// fill is exact up to grid resolution.
pub fn gen_tissue(cfg: &SynthConfig) -> Result<(RgbRaster, BinaryMask)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ 0x7153_5545)); // tissue stream
    let blob = BlobShape::sample(&mut rng, cfg.width, cfg.height);

    let grid_w = cfg.width.div_ceil(FIELD_GRID);
    let grid_h = cfg.height.div_ceil(FIELD_GRID);
    let mut scores = Vec::with_capacity(grid_w * grid_h);
    for gy in 0..grid_h {
        for gx in 0..grid_w {
            let x = (gx * FIELD_GRID + FIELD_GRID / 2) as f64;
            let y = (gy * FIELD_GRID + FIELD_GRID / 2) as f64;
            scores.push(blob.score(x, y));
        }
    }

    let cell_tissue: Vec<bool> = if cfg.tissue_fill <= 0.0 {
        vec![false; scores.len()]
    } else if cfg.tissue_fill >= 1.0 {
        vec![true; scores.len()]
    } else {
        let mut sorted = scores.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let idx = ((cfg.tissue_fill * sorted.len() as f64) as usize).min(sorted.len() - 1);
        let threshold = sorted[idx];
        scores.iter().map(|&v| v <= threshold).collect()
    };

    let max_score = scores.iter().cloned().fold(f64::MIN, f64::max).max(1e-9);
    let n = cfg.width * cfg.height;
    let mut r = vec![0u8; n];
    let mut g = vec![0u8; n];
    let mut b = vec![0u8; n];
    let mut mask = vec![0u8; n];
    let dither_seed = splitmix64(cfg.seed ^ 0x6449_5448);
    for y in 0..cfg.height {
        let gy = y / FIELD_GRID;
        for x in 0..cfg.width {
            let i = y * cfg.width + x;
            let cell = gy * grid_w + x / FIELD_GRID;
            if cell_tissue[cell] {
                // denser (darker) toward the blob center
                let t = (scores[cell] / max_score).clamp(0.0, 1.0);
                let base = 125.0 + 70.0 * t;
                let dither = (splitmix64(dither_seed ^ i as u64) % 9) as f64 - 4.0;
                let v = (base + dither).clamp(121.0, 199.0) as u8;
                r[i] = v + 15;
                g[i] = v - 8;
                b[i] = v + 5;
                mask[i] = 1;
            } else {
                r[i] = BACKGROUND_RGB.0;
                g[i] = BACKGROUND_RGB.1;
                b[i] = BACKGROUND_RGB.2;
            }
        }
    }
    let mpp = cfg.microns_per_pixel;
    let make = |v: Vec<u8>| -> Result<GrayPlane> {
        ImagePlane::from_values(cfg.width, cfg.height, mpp, v)
    };
    let raster = RgbRaster::from_planes(make(r)?, make(g)?, make(b)?)?;
    let mask = ImagePlane::from_values(cfg.width, cfg.height, mpp, mask)?;
    Ok((raster, mask))
}

/// Samples a Thomas cluster process over the tissue: Poisson parents at
/// `cluster_intensity` per mm^2 of tissue, each spawning a Poisson number of
/// figures displaced by an isotropic Gaussian; figures landing outside the
/// tissue are rejected. A `distractor_fraction` of the figures is relabeled
/// to non-consensus classes.
pub fn gen_mitoses(cfg: &SynthConfig, tissue_mask: &BinaryMask) -> Result<AnnotationSet> {
    cfg.validate()?;
    if tissue_mask.width() != cfg.width || tissue_mask.height() != cfg.height {
        return Err(FoiError::DimensionMismatch(format!(
            "tissue mask {}x{} does not match slide {}x{}",
            tissue_mask.width(),
            tissue_mask.height(),
            cfg.width,
            cfg.height
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ 0x4d49_544f)); // figure stream

    let tissue_px = tissue_mask.values().iter().filter(|&&v| v == 1).count();
    let mm_per_px = cfg.microns_per_pixel / 1000.0;
    let tissue_area_mm2 = tissue_px as f64 * mm_per_px * mm_per_px;
    let lambda_parents = cfg.cluster_intensity * tissue_area_mm2;

    let mut annotations = Vec::new();
    if lambda_parents > 0.0 && cfg.offspring_mean > 0.0 {
        let n_parents = Poisson::new(lambda_parents)
            .map_err(|e| FoiError::InvalidParameter(format!("parent intensity: {e}")))?
            .sample(&mut rng) as usize;
        let offspring = Poisson::new(cfg.offspring_mean)
            .map_err(|e| FoiError::InvalidParameter(format!("offspring mean: {e}")))?;
        let sigma_px = cfg.cluster_sigma_um / cfg.microns_per_pixel;
        let displacement = Normal::new(0.0, sigma_px)
            .map_err(|e| FoiError::InvalidParameter(format!("cluster sigma: {e}")))?;

        for _ in 0..n_parents {
            // rejection-sample the parent uniformly over tissue pixels
            let (px, py) = loop {
                let x = rng.random_range(0.0..cfg.width as f64);
                let y = rng.random_range(0.0..cfg.height as f64);
                if tissue_mask.get(x as usize, y as usize) == 1 {
                    break (x, y);
                }
            };
            let k = offspring.sample(&mut rng) as usize;
            for _ in 0..k {
                let x = px + displacement.sample(&mut rng);
                let y = py + displacement.sample(&mut rng);
                if x < 0.0 || y < 0.0 {
                    continue;
                }
                let (xi, yi) = (x as usize, y as usize);
                if xi >= cfg.width || yi >= cfg.height || tissue_mask.get(xi, yi) == 0 {
                    continue;
                }
                annotations.push(Annotation {
                    x: xi as u32,
                    y: yi as u32,
                    cell_class: CellClass::Mitosis,
                    expert1_mitosis: true,
                    expert2_mitosis: true,
                });
            }
        }
    }

    if cfg.distractor_fraction > 0.0 {
        for a in annotations.iter_mut() {
            if rng.random::<f64>() >= cfg.distractor_fraction {
                continue;
            }
            let (class, e1, e2) = match rng.random_range(0..5u32) {
                0 => (CellClass::Mitosis, true, false),
                1 => (CellClass::Mitosis, false, true),
                2 => (CellClass::MitosisLike, true, false),
                3 => (CellClass::Granulocyte, false, false),
                _ => (CellClass::Other, false, false),
            };
            a.cell_class = class;
            a.expert1_mitosis = e1;
            a.expert2_mitosis = e2;
        }
    }

    let set = AnnotationSet {
        slide_id: format!("synth-{}", cfg.seed),
        microns_per_pixel: cfg.microns_per_pixel,
        width: cfg.width as u32,
        height: cfg.height as u32,
        annotations,
    };
    set.validate()?;
    Ok(set)
}
