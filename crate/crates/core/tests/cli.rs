use std::path::Path;
use std::process::Command;

const TINY: &str = "[model]\npreset = \"tiny\"\n[train]\nepochs = 2\npoints_per_instance = 64\ncheckpoint_every = 1\n[fit]\niterations = 3\npoints_per_instance = 64\n";

fn modif(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_modif")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = modif(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

/// Generates two toy instances and their archives under `dir`.
fn toy(dir: &Path) {
    ok(&["--seed", "5", "make-toy", "--n", "2", "--resolution", "16", "--out", p(&dir.join("toy"))]);
    ok(&[
        "--seed", "5", "preprocess", "--manifest", p(&dir.join("toy/instances")), "--out", p(&dir.join("arch")),
        "--n-surface", "2000", "--n-free", "2000",
    ]);
}

#[test]
fn preprocess_and_train_are_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        toy(dir);
        std::fs::write(dir.join("tiny.toml"), TINY).unwrap();
        ok(&["--seed", "5", "--config", p(&dir.join("tiny.toml")), "train", "--data", p(&dir.join("arch")), "--out", p(&dir.join("run"))]);
    }
    for rel in ["arch/blob000.msdf", "arch/blob001.msdf", "run/model.ckpt", "run/codes.json", "run/loss.jsonl", "run/checkpoints/epoch_0001/codes.json"] {
        assert_eq!(read(a.path().join(rel)), read(b.path().join(rel)), "{rel} differs");
    }
    let log = String::from_utf8(read(a.path().join("run/loss.jsonl"))).unwrap();
    assert_eq!(log.lines().count(), 2);
    let manifest: serde_json::Value = serde_json::from_slice(&read(a.path().join("run/run.json"))).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seed"], 5);
}

#[test]
fn preprocess_seed_changes_archive() {
    let dir = tempfile::tempdir().unwrap();
    toy(dir.path());
    let out = dir.path().join("other.msdf");
    ok(&[
        "--seed", "6", "preprocess", "--manifest", p(&dir.path().join("toy/instances/blob000/manifest.json")),
        "--out", p(&out), "--n-surface", "2000", "--n-free", "2000",
    ]);
    assert_ne!(read(&out), read(dir.path().join("arch/blob000.msdf")));
    assert!(dir.path().join("run.json").is_file());
}

#[test]
fn eval_of_ground_truth_has_no_intersections() {
    let dir = tempfile::tempdir().unwrap();
    toy(dir.path());
    let inst = dir.path().join("toy/instances");
    let report = dir.path().join("ev/report.json");
    ok(&["eval", "--pred", p(&inst), "--gt", p(&inst), "--out", p(&report), "--rows", "--samples", "2000", "--voxel-res", "32"]);
    let v: serde_json::Value = serde_json::from_slice(&read(&report)).unwrap();
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 6);
    for row in rows {
        if row["category"].is_null() {
            assert_eq!(row["iv"], 0.0);
        }
        assert!(row["cd"].as_f64().unwrap() < 20.0, "{row}");
    }
    let csv = String::from_utf8(read(dir.path().join("ev/report.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn downstream_commands_run_on_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    toy(d);
    std::fs::write(d.join("tiny.toml"), TINY).unwrap();
    let cfg = p(&d.join("tiny.toml")).to_string();
    ok(&["--config", &cfg, "train", "--data", p(&d.join("arch")), "--out", p(&d.join("run"))]);
    ok(&["reconstruct", "--ckpt", p(&d.join("run")), "--instance", "blob001", "--resolution", "16", "--templates", "--out", p(&d.join("rec"))]);
    assert!(d.join("rec/blob001/manifest.json").is_file());
    assert!(!d.join("rec/blob000").exists());
    assert!(d.join("rec/templates/template_1.ply").is_file());
    ok(&[
        "--config", &cfg, "recover", "--ckpt", p(&d.join("run")), "--archive", p(&d.join("arch/blob001.msdf")),
        "--missing", "1", "--resolution", "16", "--out", p(&d.join("recov")),
    ]);
    let log = String::from_utf8(read(d.join("recov/loss.jsonl"))).unwrap();
    assert_eq!(log.lines().count(), 3);
    ok(&["--seed", "2", "augment", "--ckpt", p(&d.join("run")), "--instance", "blob000", "--count", "2", "--resolution", "16", "--out", p(&d.join("aug"))]);
    let bank: serde_json::Value = serde_json::from_slice(&read(d.join("aug/codes.json"))).unwrap();
    assert_eq!(bank["ids"], serde_json::json!(["blob000_aug00", "blob000_aug01"]));
}

#[test]
fn usage_and_runtime_errors_have_distinct_exit_codes() {
    assert_eq!(modif(&["--bogus"]).status.code(), Some(1));
    assert_eq!(modif(&["train"]).status.code(), Some(1));
    assert_eq!(modif(&["--help"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    assert_eq!(modif(&["recover", "--ckpt", p(&missing), "--archive", p(&missing), "--out", p(dir.path())]).status.code(), Some(2));
    assert_eq!(modif(&["--kernel", "native", "eval", "--pred", "a", "--gt", "b", "--out", "c.json"]).status.code(), Some(2));
    std::fs::write(dir.path().join("bad.toml"), "[train]\nepochs = \"many\"\n").unwrap();
    let out = modif(&["--config", p(&dir.path().join("bad.toml")), "train", "--data", p(dir.path()), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    std::fs::write(dir.path().join("typo.toml"), "[fit]\npoints_per_iteration = 64\n").unwrap();
    let out = modif(&["--config", p(&dir.path().join("typo.toml")), "train", "--data", p(dir.path()), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}
