//! Pluggable mitosis detectors standing in for the trained networks: an
//! oracle that rasterizes the annotated figures as filled discs, a noisy
//! variant with misses, spurious detections and gain error, the coarse
//! sub-coordinate rasterizer, and the soft IoU metric.

use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{FoiError, Result};
use crate::raster::{io::read_foim, ImagePlane, Rect};

/// Per-tile segmentation map with unit-interval values.
pub type SegMap = ImagePlane<f32>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Oracle,
    Noisy,
}

/// Noise model of the noisy detector. Defaults mirror the coarse detector's
/// tendency to overestimate: extra gain, some spurious discs, some misses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub fp_rate_per_mm2: f64,
    pub miss_prob: f64,
    pub gain: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            fp_rate_per_mm2: 1.0,
            miss_prob: 0.2,
            gain: 1.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub kind: DetectorKind,
    /// Disc radius in full-resolution pixels; also the mass-normalization
    /// constant downstream.
    pub disc_radius_px: f64,
    /// 1 = full-resolution map, 16 = coarse map.
    pub output_scale: usize,
    pub noise: NoiseParams,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        DetectorSpec {
            kind: DetectorKind::Oracle,
            disc_radius_px: 25.0,
            output_scale: 1,
            noise: NoiseParams::default(),
        }
    }
}

impl DetectorSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.disc_radius_px.is_finite() || self.disc_radius_px < 1.0 {
            return Err(FoiError::InvalidParameter(format!(
                "disc radius must be >= 1 px, got {}",
                self.disc_radius_px
            )));
        }
        if self.output_scale != 1 && self.output_scale != 16 {
            return Err(FoiError::InvalidParameter(format!(
                "output_scale must be 1 or 16, got {}",
                self.output_scale
            )));
        }
        let n = &self.noise;
        if !(0.0..=1.0).contains(&n.miss_prob) {
            return Err(FoiError::InvalidParameter(format!(
                "miss_prob must be in [0, 1], got {}",
                n.miss_prob
            )));
        }
        if !n.fp_rate_per_mm2.is_finite() || n.fp_rate_per_mm2 < 0.0 {
            return Err(FoiError::InvalidParameter(format!(
                "fp_rate_per_mm2 must be >= 0, got {}",
                n.fp_rate_per_mm2
            )));
        }
        if !n.gain.is_finite() || n.gain <= 0.0 {
            return Err(FoiError::InvalidParameter(format!(
                "gain must be > 0, got {}",
                n.gain
            )));
        }
        Ok(())
    }
}

/// Ideal detector: a filled disc of 1.0 at every consensus figure inside or
/// overlapping the tile, clipped at the tile borders. At `output_scale` 16
/// discs are drawn with sub-coordinate centers (see [`rasterize_coarse`]).
pub fn oracle_detect(
    tile: Rect,
    points: &[(u32, u32)],
    spec: &DetectorSpec,
    microns_per_pixel: f64,
) -> Result<SegMap> {
    spec.validate()?;
    if spec.kind != DetectorKind::Oracle {
        return Err(FoiError::InvalidParameter(
            "oracle_detect requires kind = oracle".into(),
        ));
    }
    let local = overlapping_local_points(
        tile,
        points.iter().map(|&(x, y)| (x as f64, y as f64)),
        spec.disc_radius_px,
    );
    render(
        tile,
        &local,
        spec.disc_radius_px,
        spec.output_scale,
        microns_per_pixel,
    )
}

/// Noisy detector: the oracle's discs with each one independently dropped
/// with `miss_prob`, spurious discs added as a Poisson process of
/// `fp_rate_per_mm2` over the tile area, and all values scaled by `gain`
/// then clamped to `[0, 1]`. Bit-reproducible from `rng_seed`.
///
/// Miss decisions are drawn per tile, so a figure spanning the seam between
/// two tile interiors can be dropped on one side only; the overlap margin is
/// what keeps the oracle path free of such artifacts.
pub fn noisy_detect(
    tile: Rect,
    points: &[(u32, u32)],
    spec: &DetectorSpec,
    microns_per_pixel: f64,
    rng_seed: u64,
) -> Result<SegMap> {
    spec.validate()?;
    if spec.kind != DetectorKind::Noisy {
        return Err(FoiError::InvalidParameter(
            "noisy_detect requires kind = noisy".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    // One miss draw per input point, in order, regardless of overlap.
    let kept: Vec<(f64, f64)> = points
        .iter()
        .filter(|_| rng.random::<f64>() >= spec.noise.miss_prob)
        .map(|&(x, y)| (x as f64, y as f64))
        .collect();

    let area_mm2 =
        (tile.w as f64 * microns_per_pixel / 1000.0) * (tile.h as f64 * microns_per_pixel / 1000.0);
    let lambda = spec.noise.fp_rate_per_mm2 * area_mm2;
    let n_fp = if lambda > 0.0 {
        Poisson::new(lambda)
            .map_err(|e| FoiError::InvalidParameter(format!("false-positive rate: {e}")))?
            .sample(&mut rng) as usize
    } else {
        0
    };
    let mut all = kept;
    for _ in 0..n_fp {
        let x = tile.x as f64 + rng.random::<f64>() * tile.w as f64;
        let y = tile.y as f64 + rng.random::<f64>() * tile.h as f64;
        all.push((x, y));
    }

    let local = overlapping_local_points(tile, all.into_iter(), spec.disc_radius_px);
    let mut map = render(
        tile,
        &local,
        spec.disc_radius_px,
        spec.output_scale,
        microns_per_pixel,
    )?;
    let gain = spec.noise.gain as f32;
    for v in map.values_mut() {
        *v = (*v * gain).clamp(0.0, 1.0);
    }
    Ok(map)
}

/// Tile-local coordinates of the points whose disc overlaps the tile.
fn overlapping_local_points(
    tile: Rect,
    points: impl Iterator<Item = (f64, f64)>,
    radius: f64,
) -> Vec<(f64, f64)> {
    points
        .filter(|&(x, y)| {
            x >= tile.x as f64 - radius
                && x <= tile.right() as f64 + radius
                && y >= tile.y as f64 - radius
                && y <= tile.bottom() as f64 + radius
        })
        .map(|(x, y)| (x - tile.x as f64, y - tile.y as f64))
        .collect()
}

fn render(
    tile: Rect,
    local: &[(f64, f64)],
    radius_full: f64,
    output_scale: usize,
    microns_per_pixel: f64,
) -> Result<SegMap> {
    if output_scale == 1 {
        render_full(tile.w, tile.h, local, radius_full, microns_per_pixel)
    } else {
        rasterize_coarse(
            local,
            tile.w,
            tile.h,
            output_scale,
            radius_full / output_scale as f64,
            microns_per_pixel,
        )
    }
}

/// Binary full-resolution rasterization: pixel (x, y) is 1.0 iff its
/// coordinate lies within `radius` of some disc center.
fn render_full(
    tile_w: usize,
    tile_h: usize,
    local: &[(f64, f64)],
    radius: f64,
    microns_per_pixel: f64,
) -> Result<SegMap> {
    let mut map = ImagePlane::new(tile_w, tile_h, microns_per_pixel, 0.0f32)?;
    let r2 = radius * radius;
    let ri = radius.ceil() as i64;
    for &(cx, cy) in local {
        let x_lo = (cx.floor() as i64 - ri).max(0);
        let x_hi = (cx.ceil() as i64 + ri).min(tile_w as i64 - 1);
        let y_lo = (cy.floor() as i64 - ri).max(0);
        let y_hi = (cy.ceil() as i64 + ri).min(tile_h as i64 - 1);
        for y in y_lo..=y_hi {
            let dy = y as f64 - cy;
            for x in x_lo..=x_hi {
                let dx = x as f64 - cx;
                if dx * dx + dy * dy <= r2 {
                    map.set(x as usize, y as usize, 1.0);
                }
            }
        }
    }
    Ok(map)
}

/// Coarse rasterization with sub-coordinate disc centers.
///
/// Centers are quantized to 1/256 coarse pixel; each output pixel gets the
/// fraction of its `factor` x `factor` centered subsample lattice covered
/// by the union of discs. The centered lattice keeps the mask exactly
/// symmetric under 180-degree rotation about cell centers and tracks the
/// block-averaged full-resolution disc to well within 0.1 per pixel.
pub fn rasterize_coarse(
    points: &[(f64, f64)],
    tile_w: usize,
    tile_h: usize,
    factor: usize,
    radius_coarse: f64,
    microns_per_pixel: f64,
) -> Result<SegMap> {
    if factor < 1 {
        return Err(FoiError::InvalidParameter(
            "subsampling factor must be >= 1".into(),
        ));
    }
    if !tile_w.is_multiple_of(factor) || !tile_h.is_multiple_of(factor) {
        return Err(FoiError::InvalidParameter(format!(
            "factor {factor} must divide the tile size {tile_w}x{tile_h}"
        )));
    }
    if !radius_coarse.is_finite() || radius_coarse <= 0.0 {
        return Err(FoiError::InvalidParameter(format!(
            "coarse disc radius must be positive, got {radius_coarse}"
        )));
    }
    let out_w = tile_w / factor;
    let out_h = tile_h / factor;
    let mut map = ImagePlane::new(out_w, out_h, microns_per_pixel * factor as f64, 0.0f32)?;

    let centers: Vec<(f64, f64)> = points
        .iter()
        .map(|&(x, y)| {
            let cx = (x / factor as f64 * 256.0).round() / 256.0;
            let cy = (y / factor as f64 * 256.0).round() / 256.0;
            (cx, cy)
        })
        .collect();
    if centers.is_empty() {
        return Ok(map);
    }

    let r2 = radius_coarse * radius_coarse;
    let mut touched = vec![false; out_w * out_h];
    for &(cx, cy) in &centers {
        let x_lo = ((cx - radius_coarse).floor() as i64).max(0);
        let x_hi = ((cx + radius_coarse).ceil() as i64).min(out_w as i64 - 1);
        let y_lo = ((cy - radius_coarse).floor() as i64).max(0);
        let y_hi = ((cy + radius_coarse).ceil() as i64).min(out_h as i64 - 1);
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                touched[y as usize * out_w + x as usize] = true;
            }
        }
    }

    let inv = 1.0 / factor as f64;
    let per_cell = (factor * factor) as f32;
    for (idx, hit) in touched.iter().enumerate() {
        if !hit {
            continue;
        }
        let px = (idx % out_w) as f64;
        let py = (idx / out_w) as f64;
        let mut count = 0u32;
        for b in 0..factor {
            let sy = py + (b as f64 + 0.5) * inv;
            for a in 0..factor {
                let sx = px + (a as f64 + 0.5) * inv;
                let inside = centers.iter().any(|&(cx, cy)| {
                    let dx = sx - cx;
                    let dy = sy - cy;
                    dx * dx + dy * dy <= r2
                });
                if inside {
                    count += 1;
                }
            }
        }
        map.values_mut()[idx] = count as f32 / per_cell;
    }
    Ok(map)
}

/// Soft intersection-over-union of two maps, `sum(a*b) / sum(a + b - a*b)`;
/// defined as 1 when both maps are identically zero. Binary inputs reduce it
/// to set IoU exactly.
pub fn iou(a: &SegMap, b: &SegMap) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(FoiError::DimensionMismatch(format!(
            "iou inputs differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let mut inter = 0.0f64;
    let mut union = 0.0f64;
    for (&av, &bv) in a.values().iter().zip(b.values()) {
        let (av, bv) = (av as f64, bv as f64);
        inter += av * bv;
        union += av + bv - av * bv;
    }
    if union == 0.0 {
        Ok(1.0)
    } else {
        Ok(inter / union)
    }
}

/// Deterministic per-tile seed so parallel tile execution stays
/// order-independent and reproducible.
pub fn tile_seed(global_seed: u64, tile_i: usize, tile_j: usize) -> u64 {
    let mut h = splitmix64(global_seed);
    h = splitmix64(h ^ (tile_i as u64).wrapping_mul(0x9E3779B97F4A7C15));
    splitmix64(h ^ (tile_j as u64).wrapping_mul(0xBF58476D1CE4E5B9))
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// File holding an externally produced per-tile map.
pub fn external_tile_path(dir: &Path, origin: (usize, usize)) -> PathBuf {
    dir.join(format!("tile_{}_{}.foim", origin.0, origin.1))
}

/// Reads one externally produced tile map (FOIM stream).
pub fn load_external_tile(dir: &Path, origin: (usize, usize)) -> Result<SegMap> {
    read_foim(&external_tile_path(dir, origin))
}
