use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_camnoise"));
    c.env("RUST_LOG", "warn").env_remove("CAMNOISE_DATASET_ROOT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn tiny_config(dir: &Path, extra: Value) -> PathBuf {
    let mut cfg = json!({
        "output_dir": dir.join("run"),
        "oracle": {"images": 4, "height": 32, "width": 32, "test_fraction": 0.25},
        "generator": {"width": 4, "stages": 1, "blocks_per_stage": 1, "seed_channels": 4},
        "discriminator": {"base_width": 4, "max_width": 4, "levels": 2},
        "train": {"batch_size": 2, "total_steps": 6, "crop_size": 16, "checkpoint_every": 3},
        "extractor": {"kind": "test_random", "seed": 0, "width_divisor": 16},
        "synthesis": {"tile": 32, "overlap": 6},
    });
    for (k, v) in extra.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn oracle_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), json!({}));
    let run_dir = tmp.path().join("run");

    let out = run(&["prepare", "--config", s(&cfg)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run_dir.join("oracle_params.json").exists());
    assert!(run_dir.join("resolved_prepare.json").exists());
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(run_dir.join("manifest.json")).unwrap()).unwrap();
    // 4 images x 2 ISO levels; the last image is held out.
    assert_eq!(std::fs::read_dir(run_dir.join("data")).unwrap().count(), 8);
    assert!(manifest["split"]["test"].as_array().unwrap().iter().all(|r| r["scene"] == "0004"));

    let out = run(&["train", "--config", s(&cfg)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 7);
    assert!(run_dir.join("checkpoint_00000003.ckpt").exists());
    let resolved: Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("resolved_train.json")).unwrap()).unwrap();
    assert!(resolved["normalization"].is_object());

    let ckpt = run_dir.join("final.ckpt");
    let inputs: Vec<PathBuf> = std::fs::read_dir(run_dir.join("data")).unwrap().map(|e| e.unwrap().path()).collect();
    let mut args = vec!["synthesize", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--seed", "5"];
    args.extend(inputs.iter().map(|p| s(p)));
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let synth = run_dir.join("synth");
    let first = std::fs::read(synth.join(inputs[0].file_name().unwrap()).join("NOISY_SRGB_010.png")).unwrap();
    let out = run(&args);
    assert!(out.status.success());
    let again = std::fs::read(synth.join(inputs[0].file_name().unwrap()).join("NOISY_SRGB_010.png")).unwrap();
    assert_eq!(first, again);
    assert!(synth.join(inputs[0].file_name().unwrap()).join("NOISEMAP_x10.png").exists());

    let data = run_dir.join("data");
    let out = run(&["evaluate", "--config", s(&cfg), s(&data), s(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("evaluation/report.json")).unwrap()).unwrap();
    camnoise::evaluation::validate_report_json(&report).unwrap();
    assert!(report["aggregate"].as_f64().unwrap().abs() < 1e-9);
    assert!(run_dir.join("evaluation/curve_real.csv").exists());

    let out = run(&["evaluate", "--config", s(&cfg), s(&data), s(&synth)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("evaluation/report.json")).unwrap()).unwrap();
    assert!(report["aggregate"].as_f64().unwrap() > 0.0);

    let out = run(&["train", "--config", s(&cfg), "--checkpoint", s(&run_dir.join("checkpoint_00000003.ckpt"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn em2_manifest_labels_every_crop() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), json!({"mode": "em2", "split_crop": 16, "oracle": {"images": 2, "height": 32, "width": 32}}));
    let out = run(&["prepare", "--config", s(&cfg)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m: Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("run/manifest.json")).unwrap()).unwrap();
    let (train, test) = (m["split"]["train"].as_array().unwrap(), m["split"]["test"].as_array().unwrap());
    // 2 scenes x 2 ISO instances x 4 crops of 16x16.
    assert_eq!(train.len() + test.len(), 16);
    for scene in ["0001", "0002"] {
        assert!(test.iter().any(|r| r["scene"] == scene));
    }
}

#[test]
fn configuration_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), json!({"oracle": null, "dataset_root": tmp.path().join("missing")}));
    let out = run(&["prepare", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"unknown_key": 1}"#).unwrap();
    assert_eq!(run(&["prepare", "--config", s(&bad)]).status.code(), Some(2));

    let img = tmp.path().join("x.png");
    let out = run(&["synthesize", "--checkpoint", s(&tmp.path().join("nope.ckpt")), s(&img)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn space_conflict_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), json!({}));
    assert!(run(&["prepare", "--config", s(&cfg)]).status.success());
    let out = run(&["train", "--config", s(&cfg), "--space", "raw"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dataset_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), json!({}));
    assert!(run(&["prepare", "--config", s(&cfg)]).status.success());
    let data = tmp.path().join("run/data");
    let second = tmp.path().join("second");
    std::fs::create_dir_all(&second).unwrap();
    let cfg2 = tiny_config(&second, json!({"oracle": null, "mode": "em2", "split_crop": 32}));
    let out = bin().args(["prepare", "--config", s(&cfg2)]).env("CAMNOISE_DATASET_ROOT", &data).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m: Value = serde_json::from_str(&std::fs::read_to_string(second.join("run/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["root"].as_str().unwrap(), data.to_str().unwrap());
}

#[test]
fn report_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["report", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout), "no reports found\n");
    for (name, agg) in [("b_run", 0.5), ("a_run", 0.25)] {
        let dir = tmp.path().join(name);
        std::fs::create_dir_all(&dir).unwrap();
        let r = json!({"mode": "EM2_SRGB", "per_brandmark": {"IP": agg}, "aggregate": agg, "per_channel": {"R": agg}, "sample_counts": {"IP": 10}});
        std::fs::write(dir.join("report.json"), r.to_string()).unwrap();
    }
    let out = run(&["report", s(tmp.path())]);
    let text = String::from_utf8_lossy(&out.stdout);
    let rows: Vec<&str> = text.lines().skip(2).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("| a_run") && rows[1].starts_with("| b_run"));
}
