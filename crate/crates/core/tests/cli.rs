use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use imix::io::{decode_label_pgm, decode_mask_pgm, encode_ecs_csv, read_ppm, write_labels, write_ppm};
use imix::{ImageGrid, LabelMap};

fn imix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imix")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_inputs(dir: &Path) {
    let source_labels = LabelMap::from_rows(4, &[&[0, 0, 1, 1], &[0, 2, 2, 1], &[3, 3, 2, 1], &[3, 3, 0, 0]]).unwrap();
    let target_labels = LabelMap::from_rows(4, &[&[1, 1, 1, 1], &[2, 2, 2, 2], &[0, 0, 0, 0], &[3, 3, 3, 3]]).unwrap();
    let flat = |v: f64| ImageGrid::new(3, 4, 4, vec![v; 48]).unwrap();
    write_ppm(dir.join("xs.ppm"), &flat(1.0)).unwrap();
    write_ppm(dir.join("xt.ppm"), &flat(0.0)).unwrap();
    write_labels(dir.join("ys.pgm"), &source_labels).unwrap();
    write_labels(dir.join("yt.csv"), &target_labels).unwrap();
    fs::write(dir.join("ecs.csv"), encode_ecs_csv(&[0.9, 0.2, 0.5, 0.7])).unwrap();
}

#[test]
fn mix_writes_composite_and_mask() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    let out = dir.path().join("out");
    let d = dir.path();
    let o = imix(&[
        "mix", "--source-image", path(&d.join("xs.ppm")), "--source-labels", path(&d.join("ys.pgm")),
        "--target-image", path(&d.join("xt.ppm")), "--target-labels", path(&d.join("yt.csv")),
        "--ecs", path(&d.join("ecs.csv")), "--eta", "0.5", "--out", path(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    // SSTF-U with eta 0.5 over 4 classes takes the two lowest-ECS source classes: 1 and 2
    let sel: serde_json::Value = serde_json::from_slice(&fs::read(out.join("selection.json")).unwrap()).unwrap();
    assert_eq!(sel["selected_classes"], serde_json::json!([1, 2]));
    let mask = decode_mask_pgm(&fs::read(out.join("mask.pgm")).unwrap()).unwrap();
    let ym = decode_label_pgm(&fs::read(out.join("y_m.pgm")).unwrap(), Some(4)).unwrap();
    let xm = read_ppm(out.join("x_m.ppm")).unwrap();
    let ys = LabelMap::from_rows(4, &[&[0, 0, 1, 1], &[0, 2, 2, 1], &[3, 3, 2, 1], &[3, 3, 0, 0]]).unwrap();
    for px in 0..16 {
        let (r, c) = (px / 4, px % 4);
        let from_source = matches!(ys.get(r, c), 1 | 2);
        assert_eq!(mask.get(r, c), from_source);
        assert_eq!(xm.get(0, px), if from_source { 1.0 } else { 0.0 });
        if from_source {
            assert_eq!(ym.get(r, c), ys.get(r, c));
        }
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 5);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn mix_without_ecs_for_imix_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    let d = dir.path();
    let o = imix(&[
        "mix", "--source-image", path(&d.join("xs.ppm")), "--source-labels", path(&d.join("ys.pgm")),
        "--target-image", path(&d.join("xt.ppm")), "--target-labels", path(&d.join("yt.csv")),
        "--out", path(&d.join("o")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn mix_with_missing_or_corrupt_input_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    let d = dir.path();
    fs::write(d.join("bad.ppm"), b"P6\n4 4\n255\nshort").unwrap();
    let o = imix(&[
        "mix", "--source-image", path(&d.join("bad.ppm")), "--source-labels", path(&d.join("ys.pgm")),
        "--target-image", path(&d.join("xt.ppm")), "--target-labels", path(&d.join("yt.csv")),
        "--sampler", "classmix", "--out", path(&d.join("o")),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn schedule_csv_and_bad_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let o = imix(&["schedule", "--iters", "1000", "--out", path(dir.path())]);
    assert!(o.status.success());
    let csv = fs::read_to_string(dir.path().join("schedule.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 1002);
    assert_eq!(rows[1], "0,0.7");
    let mid: f64 = rows[501].split(',').nth(1).unwrap().parse().unwrap();
    assert!((mid - 0.525).abs() < 1e-12);

    let o = imix(&["schedule", "--eta-min", "0.9", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"train": {"iterations": 5, "bogus": 1}}"#).unwrap();
    let o = imix(&["simulate", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"train": {"iterations": 60}, "data": {"height": 32, "width": 32, "thing_radius": [3, 6], "rare_radius": [1.5, 3]},
            "train_pairs": 4, "eval_images": 3}"#,
    )
    .unwrap();
    let mut runs = Vec::new();
    for seed in ["1", "2"] {
        let out = dir.path().join(format!("run{seed}"));
        let o = imix(&["simulate", "--config", path(&cfg), "--seed", seed, "--out", path(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        for f in ["metrics.csv", "ecs_history.csv", "iou.csv", "model.bin", "config.json", "manifest.json"] {
            assert!(out.join(f).exists(), "missing {f}");
        }
        let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
        assert!(metrics.starts_with("iteration,L_S,L_M,eta,ecs_source_0,"));
        assert_eq!(metrics.lines().count(), 61);
        runs.push(out);
    }
    let report = dir.path().join("report");
    let o = imix(&["report", path(&runs[0]), path(&runs[1]), "--bins", "5", "--out", path(&report)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let bins = fs::read_to_string(report.join("reliability.csv")).unwrap();
    assert_eq!(bins.lines().count(), 6);
    let runs_csv = fs::read_to_string(report.join("runs.csv")).unwrap();
    assert_eq!(runs_csv.lines().count(), 3);

    let o = imix(&["report", path(&dir.path().join("nowhere")), "--out", path(&report)]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn ablate_tiny_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ablate.json");
    fs::write(
        &cfg,
        r#"{"base": {"train": {"iterations": 8}, "data": {"height": 20, "width": 20, "thing_radius": [2.5, 4], "rare_radius": [1.5, 2]},
                     "train_pairs": 2, "eval_images": 2},
            "fixed_etas": [0.5], "taus": [0.0, 0.999]}"#,
    )
    .unwrap();
    let o = imix(&["ablate", "--config", path(&cfg), "--seeds", "2", "--grid", "tau", "--out", path(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(dir.path().join("ablation_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(summary.starts_with("grid,strategy,eta,tau,seeds,mean_miou,std_miou\ntau,SSTF-U,dynamic,0,2,"));
}
