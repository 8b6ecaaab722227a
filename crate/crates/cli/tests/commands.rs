//! The `parelab` binary: outputs, snapshots and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn parelab(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_parelab")).current_dir(cwd).args(args).env_remove("PARELAB_THREADS").output().unwrap()
}

fn ok(cwd: &Path, args: &[&str]) -> String {
    let out = parelab(cwd, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn gen_data_writes_a_readable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-data", "--out", "d", "--size", "10"]);
    assert!(dir.path().join("d/index.json").exists());
    assert!(dir.path().join("d/resolved_config.json").exists());
    let summary = ok(dir.path(), &["inspect", "d"]);
    assert!(summary.contains("10 samples"), "{summary}");
}

#[test]
fn bad_configs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("spec.json"), r#"{"size": 4, "no_such_field": 1}"#).unwrap();
    assert_eq!(parelab(dir.path(), &["gen-data", "--spec", "spec.json", "--out", "d"]).status.code(), Some(2));
    std::fs::write(dir.path().join("broken.json"), "{").unwrap();
    assert_eq!(parelab(dir.path(), &["gen-data", "--spec", "broken.json", "--out", "d"]).status.code(), Some(2));
    assert_eq!(parelab(dir.path(), &["train", "--bogus-flag"]).status.code(), Some(2));
}

#[test]
fn missing_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = parelab(dir.path(), &["eval", "--checkpoint", "nope.bin", "--dataset", "nowhere", "--out", "e"]);
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn train_eval_and_attention_export() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data", "--out", "data", "--size", "8"]);
    ok(d, &["train", "--data", "data", "--out", "pare", "--steps", "2", "--batch-size", "2", "--randcrop-start", "2"]);
    ok(d, &["train", "--data", "data", "--out", "gap", "--steps", "2", "--batch-size", "2", "--randcrop-start", "2", "--architecture", "gap"]);

    ok(d, &["eval", "--checkpoint", "pare/checkpoint.bin", "--dataset", "data", "--out", "eval", "--occluded"]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("eval/eval.json")).unwrap()).unwrap();
    for key in ["mpjpe", "pa_mpjpe", "pve", "pck", "seg_iou"] {
        assert!(report["clean"][key].is_number(), "clean.{key}");
    }
    assert!(report["degradation"]["mpjpe"].is_number());

    ok(d, &["export-attention", "--checkpoint", "pare/checkpoint.bin", "--dataset", "data", "--out", "att", "--samples", "1"]);
    let maps = std::fs::read_dir(d.join("att")).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().contains("_attn_")).count();
    assert_eq!(maps, 25);
    let gap = parelab(d, &["export-attention", "--checkpoint", "gap/checkpoint.bin", "--dataset", "data", "--out", "att2"]);
    assert_eq!(gap.status.code(), Some(2));
}
