//! Command-line behavior: exit codes, diagnostics, output schemas, and the
//! external detector mode.

use std::path::Path;
use std::process::{Command, Output};

use foi_core::annotations::{consensus_mitoses, load_annotations};
use foi_core::detector::{external_tile_path, oracle_detect, DetectorSpec};
use foi_core::raster::io::write_foim;
use foi_core::raster::make_tile_grid;

fn foi(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_foi"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_exit(output: &Output, code: i32) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
}

/// Small slide that runs every stage in well under a second.
fn synth_args(seed: &str) -> Vec<String> {
    vec![
        "synth".into(),
        "--set".into(),
        "synth.width=2560".into(),
        "--set".into(),
        "synth.height=1920".into(),
        "--set".into(),
        "synth.tissue_fill=0.85".into(),
        "--set".into(),
        "synth.cluster_intensity=4".into(),
        "--set".into(),
        format!("seed={seed}"),
    ]
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("broken.json"), "{ not json").unwrap();
    let out = foi(dir.path(), &["propose", "--config", "broken.json"]);
    assert_exit(&out, 2);

    // unknown key
    std::fs::write(
        dir.path().join("typo.json"),
        r#"{"pipeline": {"tile_sze": 256}}"#,
    )
    .unwrap();
    let out = foi(dir.path(), &["propose", "--config", "typo.json"]);
    assert_exit(&out, 2);

    // malformed --set
    let out = foi(dir.path(), &["propose", "--set", "no_equals_sign"]);
    assert_exit(&out, 2);
}

#[test]
fn missing_inputs_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = foi(dir.path(), &["propose"]);
    assert_exit(&out, 3);

    let out = foi(dir.path(), &["evaluate", "--config", "does_not_exist.json"]);
    assert_exit(&out, 3);
}

#[test]
fn all_background_slide_exits_4_with_empty_valid_mask() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = synth_args("11");
    // a later --set wins, leaving the slide with no tissue at all
    args.extend(["--set".into(), "synth.tissue_fill=0".into()]);
    let args_ref: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    assert_exit(&foi(dir.path(), &args_ref), 0);

    let out = foi(dir.path(), &["propose", "--set", "seed=11"]);
    assert_exit(&out, 4);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("empty valid mask"), "stderr: {stderr}");
}

#[test]
fn mask_sidecar_lists_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let owned = synth_args("12");
    let args: Vec<&str> = owned.iter().map(|s| s.as_str()).collect();
    assert_exit(&foi(dir.path(), &args), 0);
    assert_exit(&foi(dir.path(), &["mask"]), 0);

    let meta: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/mask_meta.json")).unwrap(),
    )
    .unwrap();
    assert!(meta["otsu_threshold"].is_u64());
    assert_eq!(meta["coverage_threshold"].as_f64().unwrap(), 0.95);
    assert_eq!(meta["se_radius"].as_u64().unwrap(), 2);
    assert_eq!(meta["downsample_factor"].as_u64().unwrap(), 32);
}

#[test]
fn propose_emits_full_record_and_evaluate_reports() {
    let dir = tempfile::tempdir().unwrap();
    let owned = synth_args("13");
    let args: Vec<&str> = owned.iter().map(|s| s.as_str()).collect();
    assert_exit(&foi(dir.path(), &args), 0);
    assert_exit(&foi(dir.path(), &["propose", "--set", "seed=13"]), 0);

    let record: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/proposal.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(record["slide_id"], "synth-13");
    assert_eq!(record["detector"], "oracle");
    for key in ["x", "y", "w", "h"] {
        assert!(record["rect"][key].is_u64(), "rect.{key}");
    }
    assert!(record["estimated_mc"].as_f64().unwrap() >= 0.0);
    assert!(record["gt_mc"].is_u64());
    assert_eq!(record["window"]["area_mm2"].as_f64().unwrap(), 2.37);

    assert_exit(&foi(dir.path(), &["evaluate", "--set", "seed=13"]), 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["slides"].as_array().unwrap().len(), 1);
    assert!(report["pooled_pearson"].is_number());
    let csv_text = std::fs::read_to_string(dir.path().join("out/scatter.csv")).unwrap();
    assert!(csv_text.starts_with("slide_id,grid_x,grid_y,gt_mc,est_mc"));

    // the pooled coefficient must be recomputable from the emitted scatter
    let mut reader = csv::Reader::from_path(dir.path().join("out/scatter.csv")).unwrap();
    let mut gt = Vec::new();
    let mut est = Vec::new();
    for row in reader.deserialize::<foi_core::eval::ScatterRow>() {
        let row = row.unwrap();
        gt.push(row.gt_mc as f64);
        est.push(row.est_mc);
    }
    let recount = foi_core::eval::pearson(&est, &gt).unwrap();
    let pooled = report["pooled_pearson"].as_f64().unwrap();
    assert!(
        (recount - pooled).abs() <= 1e-9,
        "csv recount {recount} vs report {pooled}"
    );
}

#[test]
fn zero_annotation_slide_reports_null_correlation() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = synth_args("14");
    args.extend(["--set".into(), "synth.cluster_intensity=0".into()]);
    let args_ref: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    assert_exit(&foi(dir.path(), &args_ref), 0);
    assert_exit(&foi(dir.path(), &["evaluate", "--set", "seed=14"]), 0);

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/report.json")).unwrap())
            .unwrap();
    assert!(report["slides"][0]["pearson_r"].is_null());
    assert!(report["pooled_pearson"].is_null());
    assert_eq!(report["slides"][0]["proposal_gt_mc"].as_u64().unwrap(), 0);
}

#[test]
fn external_detector_mode_runs_without_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let owned = synth_args("15");
    let args: Vec<&str> = owned.iter().map(|s| s.as_str()).collect();
    assert_exit(&foi(dir.path(), &args), 0);

    // build per-tile maps from the annotations, then hide the annotations
    let set = load_annotations(&dir.path().join("out/annotations.json")).unwrap();
    let points = consensus_mitoses(&set);
    let slide = set.geometry();
    let grid = make_tile_grid(slide.width, slide.height, 512, 64).unwrap();
    let tiles_dir = dir.path().join("tiles");
    std::fs::create_dir_all(&tiles_dir).unwrap();
    let spec = DetectorSpec::default();
    for origin in grid.origins() {
        let rect = grid.tile_rect(origin, slide.width, slide.height);
        let tile = oracle_detect(rect, &points, &spec, slide.microns_per_pixel).unwrap();
        write_foim(&external_tile_path(&tiles_dir, origin), &tile).unwrap();
    }
    std::fs::rename(
        dir.path().join("out/annotations.json"),
        dir.path().join("out/annotations.hidden"),
    )
    .unwrap();

    let out = foi(
        dir.path(),
        &[
            "propose",
            "--set",
            "detector.kind=external",
            "--set",
            "detector.tiles_dir=tiles",
            "--set",
            "paths.microns_per_pixel=1.0",
        ],
    );
    assert_exit(&out, 0);
    let record: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/proposal.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(record["detector"], "external");
    assert!(record["gt_mc"].is_null());

    // tiles directory missing -> missing input
    let out = foi(
        dir.path(),
        &[
            "propose",
            "--set",
            "detector.kind=external",
            "--set",
            "detector.tiles_dir=absent",
            "--set",
            "paths.microns_per_pixel=1.0",
        ],
    );
    assert_exit(&out, 3);
}
