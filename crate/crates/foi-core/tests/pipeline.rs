//! End-to-end pipeline runs on synthetic slides, plus the external
//! per-tile detector interface.

use foi_core::annotations::{consensus_mitoses, gt_mc_map_on_grid};
use foi_core::density::EvalGrid;
use foi_core::detector::{external_tile_path, oracle_detect, DetectorKind, DetectorSpec};
use foi_core::pipeline::{
    detect_stitched, detect_stitched_external, run_evaluate, DetectorInput, PipelineParams,
};
use foi_core::raster::io::write_foim;
use foi_core::raster::make_tile_grid;
use foi_core::synth::{gen_mitoses, gen_tissue, SynthConfig};

fn test_slide(seed: u64) -> SynthConfig {
    SynthConfig {
        width: 4096,
        height: 3072,
        microns_per_pixel: 1.0,
        tissue_fill: 0.8,
        cluster_intensity: 2.0,
        offspring_mean: 8.0,
        cluster_sigma_um: 120.0,
        distractor_fraction: 0.1,
        seed,
    }
}

#[test]
fn oracle_pipeline_tracks_ground_truth() {
    let cfg = test_slide(400);
    let (rgb, tissue) = gen_tissue(&cfg).unwrap();
    let set = gen_mitoses(&cfg, &tissue).unwrap();
    let params = PipelineParams::default();
    let detector = DetectorInput::Simulated(DetectorSpec::default());

    let result = run_evaluate(&rgb, &set, &detector, &params, cfg.seed).unwrap();
    let r = result
        .report
        .pearson_r
        .expect("synthetic slides are not constant");
    assert!(r >= 0.99, "oracle pearson r = {r}");
    assert!(result.report.n_positions >= 10);

    // proposal center within one grid stride of the densest window center
    let slide = set.geometry();
    let (win_w, win_h) = params.window.dims_at(1.0).unwrap();
    let grid = EvalGrid::new(slide.width, slide.height, win_w, win_h, params.grid_stride).unwrap();
    let gt = gt_mc_map_on_grid(&consensus_mitoses(&set), &grid, 1.0);
    let mut best = (0usize, 0usize, 0u32);
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            if gt.get(i, j) > best.2 {
                best = (i, j, gt.get(i, j));
            }
        }
    }
    let (bi, bj, _) = best;
    let (gx, gy) = grid.center(bi, bj);
    let rect = result.propose.proposal.rect;
    let (px, py) = (rect.x + rect.w / 2, rect.y + rect.h / 2);
    let dx = (px as i64 - gx as i64).unsigned_abs() as usize;
    let dy = (py as i64 - gy as i64).unsigned_abs() as usize;
    assert!(
        dx <= params.grid_stride && dy <= params.grid_stride,
        "proposal center ({px},{py}) vs gt argmax ({gx},{gy})"
    );
    // the proposal's own count should be near the best window's
    let gt_at_proposal = result.report.proposal_gt_mc;
    assert!(gt_at_proposal as f64 >= 0.8 * best.2 as f64);

    // proposal invariants: window dims, containment, valid center
    assert_eq!((rect.w, rect.h), (win_w, win_h));
    assert!(rect.right() <= slide.width && rect.bottom() <= slide.height);
    let lowres = &result.propose.valid_lowres;
    let scale = lowres.microns_per_pixel() / slide.microns_per_pixel;
    let cx = ((px as f64 / scale) as usize).min(lowres.width() - 1);
    let cy = ((py as f64 / scale) as usize).min(lowres.height() - 1);
    assert_eq!(
        lowres.get(cx, cy),
        1,
        "proposal center must sit on valid tissue"
    );
}

#[test]
fn noisy_pipeline_correlates_worse_than_oracle() {
    let cfg = test_slide(401);
    let (rgb, tissue) = gen_tissue(&cfg).unwrap();
    let set = gen_mitoses(&cfg, &tissue).unwrap();
    let params = PipelineParams::default();

    let oracle = DetectorInput::Simulated(DetectorSpec::default());
    let noisy = DetectorInput::Simulated(DetectorSpec {
        kind: DetectorKind::Noisy,
        output_scale: 16,
        ..DetectorSpec::default()
    });

    let r_oracle = run_evaluate(&rgb, &set, &oracle, &params, cfg.seed)
        .unwrap()
        .report
        .pearson_r
        .unwrap();
    let r_noisy = run_evaluate(&rgb, &set, &noisy, &params, cfg.seed)
        .unwrap()
        .report
        .pearson_r
        .unwrap();
    assert!(r_noisy < r_oracle, "noisy {r_noisy} vs oracle {r_oracle}");
}

#[test]
fn external_tiles_reproduce_the_simulated_detector() {
    let cfg = SynthConfig {
        width: 1600,
        height: 1200,
        ..test_slide(402)
    };
    let (_, tissue) = gen_tissue(&cfg).unwrap();
    let set = gen_mitoses(&cfg, &tissue).unwrap();
    let points = consensus_mitoses(&set);
    let slide = set.geometry();

    for scale in [1usize, 16] {
        let spec = DetectorSpec {
            output_scale: scale,
            ..DetectorSpec::default()
        };
        let params = PipelineParams::default();
        let dir = tempfile::tempdir().unwrap();
        let grid = make_tile_grid(
            slide.width,
            slide.height,
            params.tiling.tile_size,
            params.tiling.margin,
        )
        .unwrap();
        for origin in grid.origins() {
            let rect = grid.tile_rect(origin, slide.width, slide.height);
            let tile = oracle_detect(rect, &points, &spec, slide.microns_per_pixel).unwrap();
            write_foim(&external_tile_path(dir.path(), origin), &tile).unwrap();
        }

        let external = detect_stitched_external(&slide, dir.path(), &params.tiling).unwrap();
        let simulated = detect_stitched(&slide, &points, &spec, &params.tiling, 0).unwrap();
        assert_eq!(external.width(), simulated.width());
        assert_eq!(external.height(), simulated.height());
        for (a, b) in external.values().iter().zip(simulated.values()) {
            assert_eq!(a.to_bits(), b.to_bits(), "scale {scale}");
        }
    }
}

#[test]
fn external_missing_tile_is_an_error() {
    let slide = foi_core::SlideGeometry {
        width: 1600,
        height: 1200,
        microns_per_pixel: 1.0,
    };
    let dir = tempfile::tempdir().unwrap();
    let params = PipelineParams::default();
    let err = detect_stitched_external(&slide, dir.path(), &params.tiling);
    assert!(err.is_err());
}
