use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use vic_core::density::DensityMap;

fn vic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vic"))
        .args(["--log", "warn"])
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = vic(args);
    assert!(
        out.status.success(),
        "vic {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_clip(dir: &Path, seed: &str, n_frames: &str) -> PathBuf {
    let clip = dir.join(format!("clip{seed}"));
    ok(&["synth", "--out", s(&clip), "--seed", seed, "--n-frames", n_frames, "--clip-id", &format!("c{seed}")]);
    clip
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn synth_writes_a_complete_clip() {
    let dir = tempfile::tempdir().unwrap();
    let clip = synth_clip(dir.path(), "3", "6");
    for f in ["manifest.json", "annotations.csv", "synth.json"] {
        assert!(clip.join(f).is_file(), "{f} missing");
    }
    let frames = std::fs::read_dir(clip.join("frames")).unwrap().count();
    assert_eq!(frames, 6);
    assert_eq!(read_json(&clip.join("synth.json"))["seed"], 3);
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = std::fs::read(synth_clip(&dir.path().join("a"), "9", "5").join("annotations.csv")).unwrap();
    let b = std::fs::read(synth_clip(&dir.path().join("b"), "9", "5").join("annotations.csv")).unwrap();
    let c = std::fs::read(synth_clip(&dir.path().join("c"), "10", "5").join("annotations.csv")).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn invalid_viewport_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"viewport_width": 0}"#).unwrap();
    let out = vic(&["synth", "--config", s(&cfg), "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn derive_gt_maps_satisfy_the_subtraction_identity() {
    let dir = tempfile::tempdir().unwrap();
    let clip = synth_clip(dir.path(), "4", "7");
    let gt = dir.path().join("gt");
    ok(&["derive-gt", "--clip", s(&clip), "--stride", "2", "--sigma", "3", "--out", s(&gt)]);
    let pairs = read_json(&gt.join("derive_gt.json"))["pairs"].as_array().unwrap().len();
    assert_eq!(pairs, 3);
    let maps = std::fs::read_dir(&gt)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "vicd"))
        .count();
    assert_eq!(maps, 6 * pairs);
    let load = |a: usize, b: usize, name: &str| DensityMap::load(gt.join(format!("{a:06}_{b:06}_{name}.vicd"))).unwrap();
    for (a, b) in [(0, 2), (2, 4), (4, 6)] {
        let sum_a = load(a, b, "shared_a").add(&load(a, b, "outflow_a")).unwrap();
        let sum_b = load(a, b, "shared_b").add(&load(a, b, "inflow_b")).unwrap();
        assert!(load(a, b, "global_a").max_abs_diff(&sum_a).unwrap() <= 1e-6);
        assert!(load(a, b, "global_b").max_abs_diff(&sum_b).unwrap() <= 1e-6);
    }
}

#[test]
fn stride_beyond_clip_is_a_parameter_error() {
    let dir = tempfile::tempdir().unwrap();
    let clip = synth_clip(dir.path(), "5", "4");
    let out = vic(&["derive-gt", "--clip", s(&clip), "--stride", "4", "--out", s(&dir.path().join("gt"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_clip_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = vic(&["count", "--clip", s(&dir.path().join("nope")), "--oracle", "--out", s(&dir.path().join("r.json"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn oracle_count_and_eval_are_near_exact() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let clip = synth_clip(&data, "6", "9");
    let pred = dir.path().join("pred");
    std::fs::create_dir(&pred).unwrap();
    ok(&["count", "--clip", s(&clip), "--oracle", "--stride", "1", "--out", s(&pred)]);
    let result = read_json(&pred.join("c6.json"));
    assert_eq!(result["pairs"].as_array().unwrap().len(), 8);
    ok(&["eval", "--pred", s(&pred), "--gt", s(&data), "--out", s(&dir.path().join("report"))]);
    let report = read_json(&dir.path().join("report/report.json"));
    assert!(report["MAE"].as_f64().unwrap() < 0.05, "{report}");
    assert!(report["MIAE"].as_f64().unwrap() < 1e-2, "{report}");
    assert!(dir.path().join("report/report.csv").is_file());
}

#[test]
fn train_count_and_viz_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let clip = synth_clip(dir.path(), "7", "10");
    let run = dir.path().join("run");
    ok(&[
        "train", "--data", s(&clip), "--preset", "tiny", "--out", s(&run), "--max-steps", "2", "--crop-size", "32",
    ]);
    let cfg = dir.path().join("train.json");
    std::fs::write(&cfg, r#"{"delta_min": 1, "delta_max": 2, "max_steps": 2, "crop_size": 32}"#).unwrap();
    let run2 = dir.path().join("run2");
    ok(&["train", "--data", s(&clip), "--config", s(&cfg), "--init", s(&run.join("last")), "--out", s(&run2)]);
    assert!(run2.join("summary.json").is_file());
    assert_eq!(read_json(&run2.join("train.json"))["delta_max"], 2);

    let counted = dir.path().join("count.json");
    ok(&["count", "--clip", s(&clip), "--ckpt", s(&run2.join("last")), "--stride", "2", "--out", s(&counted)]);
    let r = read_json(&counted);
    let total = r["total"].as_f64().unwrap();
    let parts = r["first_frame_count"].as_f64().unwrap()
        + r["pairs"].as_array().unwrap().iter().map(|p| p["inflow"].as_f64().unwrap()).sum::<f64>();
    assert!(total.is_finite() && total >= 0.0);
    assert!((total - parts).abs() <= 1e-9 * total.max(1.0));

    let viz = dir.path().join("viz");
    ok(&["viz", "--clip", s(&clip), "--ckpt", s(&run2.join("last")), "--pair", "0,3", "--out", s(&viz)]);
    for name in ["global_a", "global_b", "shared_a", "shared_b", "outflow_a", "inflow_b"] {
        assert!(viz.join(format!("{name}.png")).is_file(), "{name}.png missing");
    }
}
