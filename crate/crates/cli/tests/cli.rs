use std::path::Path;
use std::process::{Command, Output};

use emoformer_core::augment::AugmentPlan;
use emoformer_core::dataset::EmotionSet;
use emoformer_core::experiment::ExperimentConfig;
use emoformer_core::mfcc::MfccConfig;
use emoformer_core::synthetic::write_corpus;
use emoformer_core::training::TrainConfig;
use serde_json::Value;

fn emoformer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emoformer")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config(dir: &Path) -> String {
    let cfg = ExperimentConfig {
        emotion_preset: 5,
        augment: false,
        augment_plan: AugmentPlan { target_seconds: 0.5, ..AugmentPlan::default() },
        mfcc: MfccConfig { segment_frames: 48, overlap_frames: 16, ..MfccConfig::default() },
        train: Some(TrainConfig { max_epochs: 2, patience: 1, seed: 3, ..TrainConfig::default() }),
        ..ExperimentConfig::default()
    };
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn model_macs_prints_json() {
    let o = emoformer(&["model", "macs"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["total"], 127_717_072u64);
    let layers = v["per_layer"].as_array().unwrap();
    assert_eq!(layers.first().unwrap()["layer"], "conv2d_1");
    assert_eq!(layers.last().unwrap()["layer"], "dense_output");
}

#[test]
fn model_shapes_lists_every_layer() {
    let o = emoformer(&["model", "shapes"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let rows = v["layers"].as_array().unwrap();
    assert_eq!(rows.first().unwrap()["name"], "conv2d_1");
    assert_eq!(rows.last().unwrap()["output"], serde_json::json!([7]));
}

#[test]
fn missing_manifest_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let out = dir.path().join("out");
    let o = emoformer(&["train", "--manifest", missing.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.csv"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_exits_one() {
    let o = emoformer(&["model", "macs", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn zero_jobs_is_rejected() {
    let o = emoformer(&["--jobs", "0", "model", "macs"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_and_version_exit_zero() {
    assert!(emoformer(&["--help"]).status.success());
    let o = emoformer(&["--version"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn gradcheck_passes() {
    let o = emoformer(&["gradcheck", "--seed", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(lines.len() >= 10);
}

#[test]
fn train_eval_infer_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let set = EmotionSet::preset(5).unwrap();
    write_corpus(&dir.path().join("corpus"), &set, 4, 0.5, 16000, 2).unwrap();
    let manifest = dir.path().join("corpus/manifest.csv");
    let manifest = manifest.to_str().unwrap();
    let config = small_config(dir.path());
    let model_dir = dir.path().join("model");
    let model_dir = model_dir.to_str().unwrap();

    let o = emoformer(&["train", "--manifest", manifest, "--config", &config, "--out-dir", model_dir]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["report.json", "metrics.json", "confusion.csv", "confusion.pgm"] {
        assert!(Path::new(model_dir).join(f).exists(), "{f}");
    }

    let again = emoformer(&["train", "--manifest", manifest, "--config", &config, "--out-dir", model_dir]);
    assert_eq!(again.status.code(), Some(1));
    assert!(stderr(&again).contains("--force"), "{}", stderr(&again));

    let eval_dir = dir.path().join("eval");
    let o = emoformer(&["eval", "--manifest", manifest, "--model-dir", model_dir, "--out-dir", eval_dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(eval_dir.join("eval.json").exists());

    let wav = dir.path().join("corpus").read_dir().unwrap().map(|e| e.unwrap().path()).find(|p| p.extension().is_some_and(|e| e == "wav")).unwrap();
    let o = emoformer(&["infer", "--model-dir", model_dir, wav.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let probs: Vec<f64> = v["probabilities"].as_array().unwrap().iter().map(|p| p.as_f64().unwrap()).collect();
    assert_eq!(probs.len(), 5);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    assert!(set.contains(v["label"].as_str().unwrap()));
}
