//! Evaluation surface: per-slide and pooled Pearson correlation between
//! estimated and ground-truth mitotic counts, box-whisker quantiles of the
//! count distribution, the proposal's rank within it, and report emission.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotations::McMap;
use crate::density::{DensityMap, FoiProposal};
use crate::error::{FoiError, Result};
use crate::tissue_mask::BinaryMask;

/// Product-moment correlation coefficient.
///
/// Undefined (and therefore an error) for series shorter than two or when
/// either series is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(FoiError::DimensionMismatch(format!(
            "series lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 2 {
        return Err(FoiError::UndefinedCorrelation(format!(
            "need at least 2 samples, got {n}"
        )));
    }
    let mean_x = x.iter().sum::<f64>() / n as f64;
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&xv, &yv) in x.iter().zip(y) {
        let dx = xv - mean_x;
        let dy = yv - mean_y;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(FoiError::UndefinedCorrelation("constant series".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Box-whisker statistics by inclusive linear interpolation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn quantiles(values: &[f64]) -> Result<Quantiles> {
    if values.is_empty() {
        return Err(FoiError::InvalidParameter(
            "quantiles of an empty series".into(),
        ));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("series must not contain NaN"));
    let at = |p: f64| -> f64 {
        let h = p * (sorted.len() - 1) as f64;
        let i = h.floor() as usize;
        let frac = h - i as f64;
        if frac == 0.0 || i + 1 >= sorted.len() {
            sorted[i]
        } else {
            sorted[i] + frac * (sorted[i + 1] - sorted[i])
        }
    };
    Ok(Quantiles {
        min: sorted[0],
        q1: at(0.25),
        median: at(0.5),
        q3: at(0.75),
        max: at(1.0),
    })
}

/// Empirical-CDF rank: the fraction of distribution values `<=` the
/// proposal's value.
pub fn proposal_rank(value: f64, distribution: &[f64]) -> Result<f64> {
    if distribution.is_empty() {
        return Err(FoiError::InvalidParameter(
            "rank within an empty distribution".into(),
        ));
    }
    let below = distribution.iter().filter(|&&v| v <= value).count();
    Ok(below as f64 / distribution.len() as f64)
}

/// Per-slide evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideReport {
    pub slide_id: String,
    /// `null` when the correlation is undefined on this slide (constant
    /// ground truth or a single valid position).
    pub pearson_r: Option<f64>,
    pub mc_quantiles: Quantiles,
    pub proposal_gt_mc: u32,
    pub proposal_rank: f64,
    pub n_positions: usize,
}

/// One scatter point of the estimated-vs-ground-truth cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub slide_id: String,
    pub grid_x: usize,
    pub grid_y: usize,
    pub gt_mc: u32,
    pub est_mc: f64,
}

/// Positions that participate in evaluation: valid-mask positive and with a
/// defined density estimate.
fn eval_positions(
    est: &DensityMap,
    gt: &McMap,
    valid: &BinaryMask,
) -> Result<Vec<(usize, usize, u32, f64)>> {
    if !est.same_dims(gt) || !est.same_dims(valid) {
        return Err(FoiError::DimensionMismatch(format!(
            "evaluation grids differ: est {}x{}, gt {}x{}, valid {}x{}",
            est.width(),
            est.height(),
            gt.width(),
            gt.height(),
            valid.width(),
            valid.height()
        )));
    }
    let mut out = Vec::new();
    for y in 0..est.height() {
        for x in 0..est.width() {
            if valid.get(x, y) == 0 {
                continue;
            }
            let e = est.get(x, y);
            if e.is_nan() {
                continue;
            }
            out.push((x, y, gt.get(x, y), e));
        }
    }
    Ok(out)
}

/// Correlation, quantiles and proposal rank over the valid grid positions.
///
/// An undefined correlation (constant ground truth) is surfaced as
/// `pearson_r = None`; the rest of the report is still produced.
pub fn evaluate_slide(
    est: &DensityMap,
    gt: &McMap,
    valid: &BinaryMask,
    proposal: &FoiProposal,
    slide_id: &str,
) -> Result<SlideReport> {
    let positions = eval_positions(est, gt, valid)?;
    if positions.is_empty() {
        return Err(FoiError::EmptyValidMask);
    }
    let gt_series: Vec<f64> = positions.iter().map(|&(_, _, g, _)| g as f64).collect();
    let est_series: Vec<f64> = positions.iter().map(|&(_, _, _, e)| e).collect();

    let pearson_r = match pearson(&est_series, &gt_series) {
        Ok(r) => Some(r),
        Err(FoiError::UndefinedCorrelation(_)) => None,
        Err(e) => return Err(e),
    };
    let mc_quantiles = quantiles(&gt_series)?;
    let proposal_gt_mc = proposal
        .gt_mc
        .ok_or_else(|| FoiError::Validation("proposal carries no ground-truth count".into()))?;
    let rank = proposal_rank(proposal_gt_mc as f64, &gt_series)?;

    Ok(SlideReport {
        slide_id: slide_id.to_string(),
        pearson_r,
        mc_quantiles,
        proposal_gt_mc,
        proposal_rank: rank,
        n_positions: positions.len(),
    })
}

/// The scatter rows backing a slide's report, in row-major grid order.
pub fn scatter_rows(
    slide_id: &str,
    est: &DensityMap,
    gt: &McMap,
    valid: &BinaryMask,
) -> Result<Vec<ScatterRow>> {
    Ok(eval_positions(est, gt, valid)?
        .into_iter()
        .map(|(x, y, g, e)| ScatterRow {
            slide_id: slide_id.to_string(),
            grid_x: x,
            grid_y: y,
            gt_mc: g,
            est_mc: e,
        })
        .collect())
}

#[derive(Debug, Serialize)]
struct ReportDocument<'a> {
    slides: &'a [SlideReport],
    pooled_pearson: Option<f64>,
}

/// Writes the report JSON and the scatter CSV; returns the pooled Pearson
/// coefficient over all scatter rows (`None` when undefined).
pub fn emit_report(
    reports: &[SlideReport],
    scatter: &[ScatterRow],
    json_path: &Path,
    csv_path: &Path,
) -> Result<Option<f64>> {
    if reports.is_empty() {
        return Err(FoiError::InvalidParameter(
            "no slide reports to emit".into(),
        ));
    }
    let gt: Vec<f64> = scatter.iter().map(|r| r.gt_mc as f64).collect();
    let est: Vec<f64> = scatter.iter().map(|r| r.est_mc).collect();
    let pooled = match pearson(&est, &gt) {
        Ok(r) => Some(r),
        Err(FoiError::UndefinedCorrelation(_)) => None,
        Err(e) => return Err(e),
    };

    let doc = ReportDocument {
        slides: reports,
        pooled_pearson: pooled,
    };
    let mut text = serde_json::to_string_pretty(&doc)
        .map_err(|e| FoiError::Parse(format!("{}: {e}", json_path.display())))?;
    text.push('\n');
    std::fs::write(json_path, text).map_err(|e| FoiError::io(json_path, e))?;

    let mut writer = csv::Writer::from_path(csv_path)
        .map_err(|e| FoiError::Parse(format!("{}: {e}", csv_path.display())))?;
    for row in scatter {
        writer
            .serialize(row)
            .map_err(|e| FoiError::Parse(format!("{}: {e}", csv_path.display())))?;
    }
    writer.flush().map_err(|e| FoiError::io(csv_path, e))?;
    Ok(pooled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::ImagePlane;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pearson_perfect_and_inverse() {
        let x = [1.0, 2.0, 5.0, 9.0];
        assert_abs_diff_eq!(pearson(&x, &x).unwrap(), 1.0, epsilon = 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_abs_diff_eq!(pearson(&x, &neg).unwrap(), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn pearson_reference_value() {
        let x = [1.0, 2.0, 3.0];
        let y = [2.0, 4.0, 5.0];
        let r = pearson(&x, &y).unwrap();
        assert!((r - 0.981).abs() <= 0.001, "r = {r}");
    }

    #[test]
    fn pearson_error_paths() {
        assert!(matches!(
            pearson(&[1.0], &[2.0]),
            Err(FoiError::UndefinedCorrelation(_))
        ));
        assert!(matches!(
            pearson(&[1.0, 1.0], &[2.0, 3.0]),
            Err(FoiError::UndefinedCorrelation(_))
        ));
        assert!(matches!(
            pearson(&[1.0, 2.0], &[2.0]),
            Err(FoiError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn pearson_affine_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let x: Vec<f64> = (0..200).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..200).map(|_| rng.random()).collect();
        let base = pearson(&x, &y).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| 3.5 * v + 11.0).collect();
        let ys: Vec<f64> = y.iter().map(|v| 0.25 * v - 2.0).collect();
        assert_abs_diff_eq!(pearson(&xs, &ys).unwrap(), base, epsilon = 1e-9);
    }

    #[test]
    fn quantiles_examples() {
        let single = quantiles(&[5.0]).unwrap();
        assert_eq!(
            single,
            Quantiles {
                min: 5.0,
                q1: 5.0,
                median: 5.0,
                q3: 5.0,
                max: 5.0
            }
        );

        let exact = quantiles(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(
            exact,
            Quantiles {
                min: 1.0,
                q1: 2.0,
                median: 3.0,
                q3: 4.0,
                max: 5.0
            }
        );

        let interp = quantiles(&[4.0, 2.0, 1.0, 3.0]).unwrap();
        assert_abs_diff_eq!(interp.q1, 1.75, epsilon = 1e-12);
        assert_abs_diff_eq!(interp.median, 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(interp.q3, 3.25, epsilon = 1e-12);

        assert!(quantiles(&[]).is_err());
        assert!(interp.min <= interp.q1 && interp.q1 <= interp.median);
        assert!(interp.median <= interp.q3 && interp.q3 <= interp.max);
    }

    #[test]
    fn rank_examples_and_monotonicity() {
        let dist: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        assert_eq!(proposal_rank(100.0, &dist).unwrap(), 1.0);
        assert_eq!(proposal_rank(0.5, &dist).unwrap(), 0.0);
        let median = quantiles(&dist).unwrap().median;
        let r = proposal_rank(median, &dist).unwrap();
        assert!((r - 0.5).abs() <= 0.01, "rank at the median = {r}");

        let mut prev = 0.0;
        for v in [0.0, 10.0, 50.0, 99.0, 200.0] {
            let r = proposal_rank(v, &dist).unwrap();
            assert!(r >= prev);
            prev = r;
        }
    }

    fn grid_plane<T: Copy>(w: usize, h: usize, values: Vec<T>) -> ImagePlane<T> {
        ImagePlane::from_values(w, h, 256.0, values).unwrap()
    }

    #[test]
    fn evaluate_slide_perfect_estimate() {
        let gt = grid_plane(4, 3, (0..12u32).collect());
        let est = gt.map(|v| v as f64);
        let valid = gt.map(|_| 1u8);
        let proposal = FoiProposal {
            rect: crate::raster::Rect::new(0, 0, 10, 10),
            estimated_mc: 11.0,
            gt_mc: Some(11),
        };
        let report = evaluate_slide(&est, &gt, &valid, &proposal, "s").unwrap();
        assert_abs_diff_eq!(report.pearson_r.unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(report.proposal_rank, 1.0);
        assert_eq!(report.n_positions, 12);
    }

    #[test]
    fn evaluate_slide_constant_gt_surfaces_undefined_correlation() {
        let gt = grid_plane(4, 3, vec![7u32; 12]);
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let est = gt.map(|_| rng.random::<f64>());
        let valid = gt.map(|_| 1u8);
        let proposal = FoiProposal {
            rect: crate::raster::Rect::new(0, 0, 10, 10),
            estimated_mc: 1.0,
            gt_mc: Some(7),
        };
        let report = evaluate_slide(&est, &gt, &valid, &proposal, "s").unwrap();
        assert_eq!(report.pearson_r, None);
        assert_eq!(report.mc_quantiles.median, 7.0);
        assert_eq!(report.proposal_rank, 1.0);
    }

    #[test]
    fn evaluate_slide_without_valid_positions_errors() {
        let gt = grid_plane(2, 2, vec![1u32, 2, 3, 4]);
        let est = gt.map(|v| v as f64);
        let valid = gt.map(|_| 0u8);
        let proposal = FoiProposal {
            rect: crate::raster::Rect::new(0, 0, 1, 1),
            estimated_mc: 0.0,
            gt_mc: Some(0),
        };
        assert!(matches!(
            evaluate_slide(&est, &gt, &valid, &proposal, "s"),
            Err(FoiError::EmptyValidMask)
        ));
    }

    #[test]
    fn emit_report_single_slide_pools_to_itself() {
        let dir = tempfile::tempdir().unwrap();
        let gt = grid_plane(4, 3, (0..12u32).collect());
        let est = gt.map(|v| v as f64 * 2.0 + 1.0);
        let valid = gt.map(|_| 1u8);
        let proposal = FoiProposal {
            rect: crate::raster::Rect::new(0, 0, 10, 10),
            estimated_mc: 23.0,
            gt_mc: Some(11),
        };
        let report = evaluate_slide(&est, &gt, &valid, &proposal, "s0").unwrap();
        let rows = scatter_rows("s0", &est, &gt, &valid).unwrap();
        let pooled = emit_report(
            std::slice::from_ref(&report),
            &rows,
            &dir.path().join("report.json"),
            &dir.path().join("scatter.csv"),
        )
        .unwrap();
        assert_abs_diff_eq!(pooled.unwrap(), report.pearson_r.unwrap(), epsilon = 1e-12);

        let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
        let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(doc["slides"].as_array().unwrap().len(), 1);
        assert!(doc["pooled_pearson"].is_number());
    }

    #[test]
    fn emit_report_pooled_matches_recount_from_csv() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let mut reports = Vec::new();
        let mut scatter = Vec::new();
        for s in 0..10 {
            let gt_vals: Vec<u32> = (0..20).map(|_| rng.random_range(0..30)).collect();
            let gt = grid_plane(5, 4, gt_vals);
            let est = gt.map(|v| v as f64 + rng.random::<f64>());
            let valid = gt.map(|_| 1u8);
            let proposal = FoiProposal {
                rect: crate::raster::Rect::new(0, 0, 10, 10),
                estimated_mc: 3.0,
                gt_mc: Some(*gt.values().iter().max().unwrap()),
            };
            let id = format!("s{s}");
            reports.push(evaluate_slide(&est, &gt, &valid, &proposal, &id).unwrap());
            scatter.extend(scatter_rows(&id, &est, &gt, &valid).unwrap());
        }
        let json = dir.path().join("report.json");
        let csv_path = dir.path().join("scatter.csv");
        let pooled = emit_report(&reports, &scatter, &json, &csv_path)
            .unwrap()
            .unwrap();

        let mut reader = csv::Reader::from_path(&csv_path).unwrap();
        let mut gt = Vec::new();
        let mut est = Vec::new();
        for row in reader.deserialize::<ScatterRow>() {
            let row = row.unwrap();
            gt.push(row.gt_mc as f64);
            est.push(row.est_mc);
        }
        let recount = pearson(&est, &gt).unwrap();
        assert_abs_diff_eq!(recount, pooled, epsilon = 1e-9);
    }

    #[test]
    fn emit_report_rejects_empty_input() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            emit_report(
                &[],
                &[],
                &dir.path().join("r.json"),
                &dir.path().join("s.csv")
            ),
            Err(FoiError::InvalidParameter(_))
        ));
    }
}
