//! Valid-tissue mask: grayscale histogram, Otsu threshold, dark-side
//! binarization, morphological closing, and the 10-HPF coverage test.

use crate::density::{box_sum, FoiWindow};
use crate::error::{FoiError, Result};
use crate::raster::{GrayPlane, ImagePlane};

/// 0/1 plane. Tissue and validity masks.
pub type BinaryMask = ImagePlane<u8>;

/// 256-bin intensity histogram of an 8-bit plane.
pub fn histogram(gray: &GrayPlane) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &v in gray.values() {
        hist[v as usize] += 1;
    }
    hist
}

/// Otsu's threshold: the intensity `t` maximizing the between-class variance
/// of `{<= t}` vs `{> t}`. Ties break toward the smallest `t`; a
/// single-intensity histogram returns that intensity.
pub fn otsu_threshold(histogram: &[u64; 256]) -> Result<u8> {
    let total: u64 = histogram.iter().sum();
    if total == 0 {
        return Err(FoiError::InvalidParameter("empty histogram".into()));
    }
    let nonzero: Vec<usize> = (0..256).filter(|&i| histogram[i] > 0).collect();
    if nonzero.len() == 1 {
        return Ok(nonzero[0] as u8);
    }

    let n = total as f64;
    let s: f64 = histogram
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();
    let mut n0 = 0.0f64;
    let mut s0 = 0.0f64;
    let mut best_t = 0u8;
    let mut best_score = f64::NEG_INFINITY;
    for (t, &count) in histogram.iter().enumerate() {
        n0 += count as f64;
        s0 += t as f64 * count as f64;
        let n1 = n - n0;
        if n0 == 0.0 || n1 == 0.0 {
            continue;
        }
        let w0 = n0 / n;
        let w1 = n1 / n;
        let mu0 = s0 / n0;
        let mu1 = (s - s0) / n1;
        let d = mu0 - mu1;
        let score = w0 * w1 * d * d;
        if score > best_score {
            best_score = score;
            best_t = t as u8;
        }
    }
    Ok(best_t)
}

/// Tissue stains dark, background is bright: tissue = intensity <= t.
pub fn binarize_tissue(gray: &GrayPlane, threshold: u8) -> BinaryMask {
    gray.map(|v| u8::from(v <= threshold))
}

/// Morphological closing (dilation then erosion) with a square structuring
/// element of side `2*se_radius + 1`.
///
/// Outside-plane pixels count as 0 for the dilation and as 1 for the
/// erosion, so tissue touching the slide border is not eroded away.
pub fn binary_close(mask: &BinaryMask, se_radius: usize) -> Result<BinaryMask> {
    if se_radius < 1 {
        return Err(FoiError::InvalidParameter(
            "structuring element radius must be >= 1".into(),
        ));
    }
    let dilated = dilate(mask, se_radius);
    Ok(erode(&dilated, se_radius))
}

fn clipped_sat(mask: &BinaryMask) -> Vec<u64> {
    let (w, h) = (mask.width(), mask.height());
    let stride = w + 1;
    let mut sat = vec![0u64; stride * (h + 1)];
    for y in 0..h {
        let mut row = 0u64;
        for x in 0..w {
            row += mask.get(x, y) as u64;
            sat[(y + 1) * stride + x + 1] = sat[y * stride + x + 1] + row;
        }
    }
    sat
}

fn window_count(sat: &[u64], stride: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> u64 {
    sat[y1 * stride + x1] + sat[y0 * stride + x0] - sat[y0 * stride + x1] - sat[y1 * stride + x0]
}

fn dilate(mask: &BinaryMask, r: usize) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let sat = clipped_sat(mask);
    let stride = w + 1;
    let mut out = mask.clone();
    for y in 0..h {
        let y0 = y.saturating_sub(r);
        let y1 = (y + r + 1).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(r);
            let x1 = (x + r + 1).min(w);
            out.set(
                x,
                y,
                u8::from(window_count(&sat, stride, x0, y0, x1, y1) > 0),
            );
        }
    }
    out
}

fn erode(mask: &BinaryMask, r: usize) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let sat = clipped_sat(mask);
    let stride = w + 1;
    let mut out = mask.clone();
    for y in 0..h {
        let y0 = y.saturating_sub(r);
        let y1 = (y + r + 1).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(r);
            let x1 = (x + r + 1).min(w);
            let area = ((x1 - x0) * (y1 - y0)) as u64;
            out.set(
                x,
                y,
                u8::from(window_count(&sat, stride, x0, y0, x1, y1) == area),
            );
        }
    }
    out
}

/// The valid mask V: a position is valid iff the window centered there lies
/// fully inside the plane and the closed tissue mask covers at least
/// `coverage_threshold` of it.
///
/// Planes with a single intensity carry no tissue/background contrast;
/// bright constants (>= 128) are treated as an empty slide and dark ones as
/// full tissue, since an H&E background is bright by construction.
pub fn valid_mask(
    gray_lowres: &GrayPlane,
    window: &FoiWindow,
    coverage_threshold: f64,
    se_radius: usize,
) -> Result<BinaryMask> {
    if coverage_threshold.is_nan() || coverage_threshold <= 0.0 || coverage_threshold > 1.0 {
        return Err(FoiError::InvalidParameter(format!(
            "coverage threshold must be in (0, 1], got {coverage_threshold}"
        )));
    }
    let (win_w, win_h) = window.dims_at(gray_lowres.microns_per_pixel())?;
    if win_w > gray_lowres.width() || win_h > gray_lowres.height() {
        return Err(FoiError::Geometry(format!(
            "window {}x{} larger than plane {}x{}",
            win_w,
            win_h,
            gray_lowres.width(),
            gray_lowres.height()
        )));
    }

    let hist = histogram(gray_lowres);
    let nonzero: Vec<usize> = (0..256).filter(|&i| hist[i] > 0).collect();
    let tissue = if nonzero.len() == 1 {
        let fill = u8::from(nonzero[0] < 128);
        gray_lowres.map(|_| fill)
    } else {
        binarize_tissue(gray_lowres, otsu_threshold(&hist)?)
    };
    let closed = binary_close(&tissue, se_radius)?;

    let sums = box_sum(&closed, win_w, win_h)?;
    let needed = coverage_threshold * (win_w * win_h) as f64;
    Ok(sums.map(|s| u8::from(!s.is_nan() && s >= needed)))
}
