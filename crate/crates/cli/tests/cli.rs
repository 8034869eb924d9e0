use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn ddenoc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddenoc")).args(args).env_remove("DDENOC_OUT").output().unwrap()
}

fn bundled(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn missing_kind_is_a_usage_error_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write(tmp.path(), "bad.json", r#"{ "schema_version": 1 }"#);
    let out = ddenoc(&["validate", &path]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kind"));
}

#[test]
fn unknown_field_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write(tmp.path(), "bad.json", r#"{ "schema_version": 1, "kind": "steady-state", "colour": 3 }"#);
    let out = ddenoc(&["run", &path, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn bundled_scenarios_validate() {
    for entry in fs::read_dir(bundled("")).unwrap() {
        let path = entry.unwrap().path();
        let out = ddenoc(&["validate", path.to_str().unwrap()]);
        assert!(out.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn steady_state_run_writes_hashed_artifacts_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = bundled("steady_state_1MW.json");
    let mut runs = Vec::new();
    for sub in ["a", "b"] {
        let root = tmp.path().join(sub);
        let out = ddenoc(&["run", scenario.to_str().unwrap(), "--out", root.to_str().unwrap(), "--threads", "1"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let dir = root.join("steady_state_1MW");
        let m = manifest(&dir);
        assert_eq!(m["status"], "ok");
        assert_eq!(m["kind"], "steady-state");
        let artifact = &m["artifacts"][0];
        let csv = fs::read(dir.join(artifact["file"].as_str().unwrap())).unwrap();
        assert_eq!(artifact["bytes"].as_u64(), Some(csv.len() as u64));
        assert_eq!(artifact["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&csv)));
        runs.push((fs::read(dir.join("manifest.json")).unwrap(), csv));
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn simulate_output_round_trips_through_compare() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = write(
        tmp.path(),
        "sim.json",
        r#"{ "schema_version": 1, "kind": "simulate",
             "simulate": { "t_end": 20.0, "inputs": [[5.0, 50.0, 3.5]] },
             "simulator": { "h": 0.02, "record_every": 5 } }"#,
    );
    let out = ddenoc(&["run", &sim, "--out", tmp.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let traj = tmp.path().join("sim/simulate_trajectory.csv");
    let text = fs::read_to_string(&traj).unwrap();
    assert!(text.starts_with("t,"));

    let cmp = write(
        tmp.path(),
        "cmp.json",
        r#"{ "schema_version": 1, "kind": "compare",
             "compare": { "a": "sim/simulate_trajectory.csv", "b": "sim/simulate_trajectory.csv", "output": "Q_g" } }"#,
    );
    let out = ddenoc(&["run", &cmp, "--out", tmp.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&tmp.path().join("cmp"));
    assert_eq!(m["summary"]["inf_norm"].as_f64(), Some(0.0));
    let err = fs::read_to_string(tmp.path().join("cmp/compare_error.csv")).unwrap();
    assert!(err.starts_with("t,error"));
}

#[test]
fn missing_compare_input_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cmp = write(
        tmp.path(),
        "cmp.json",
        r#"{ "schema_version": 1, "kind": "compare", "compare": { "a": "nope.csv", "b": "nope.csv", "output": "Q_g" } }"#,
    );
    let out = ddenoc(&["run", &cmp, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}
