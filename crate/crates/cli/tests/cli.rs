use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn pcsm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcsm")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/golden_vectors.json")
}

/// A short scenario so the binary finishes quickly.
fn write_scenario(dir: &Path, stem: &str, stack: &str, attack: Option<&str>) -> PathBuf {
    let mut body = format!(
        "name = \"{stem}\"\nstack = \"{stack}\"\n\n[traffic]\nduration = 200.0\n\n[seeds]\ncount = 2\n\n[output]\ndir = \"{}\"\n",
        dir.join("out").display()
    );
    if let Some(kind) = attack {
        body.push_str(&format!("\n[attack]\nkind = \"{kind}\"\nstart_time = 50.0\n"));
    }
    let path = dir.join(format!("{stem}.toml"));
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn invalid_parameter_exits_2_and_names_the_field() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "name = \"bad\"\nstack = \"pcsm\"\n\n[trust]\ntheta = 1.5\n").unwrap();
    let o = pcsm(&["run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("trust.theta"), "{}", stderr(&o));
}

#[test]
fn unknown_stack_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "name = \"bad\"\nstack = \"zigbee\"\n").unwrap();
    assert_eq!(pcsm(&["run", path.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn missing_file_exits_3() {
    let o = pcsm(&["run", "/nonexistent/scenario.toml"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn single_seed_summary_has_zero_spread() {
    let tmp = TempDir::new().unwrap();
    let path = write_scenario(tmp.path(), "one", "pcsm", None);
    let o = pcsm(&["run", path.to_str().unwrap(), "--seed-count", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let dir = tmp.path().join("out/one");
    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["runs"], 1);
    assert_eq!(summary["pdr"]["stddev"].as_f64(), Some(0.0));
    assert_eq!(summary["stack"], "pcsm");
    let runs = fs::read_to_string(dir.join("runs.jsonl")).unwrap();
    assert_eq!(runs.lines().count(), 1);
}

#[test]
fn reruns_write_identical_files() {
    let tmp = TempDir::new().unwrap();
    let path = write_scenario(tmp.path(), "twice", "csm", Some("early_frag1"));
    let read = || {
        let o = pcsm(&["run", path.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        let dir = tmp.path().join("out/twice");
        (
            fs::read(dir.join("runs.jsonl")).unwrap(),
            fs::read(dir.join("summary.json")).unwrap(),
        )
    };
    assert_eq!(read(), read());
}

#[test]
fn trace_flag_writes_logs() {
    let tmp = TempDir::new().unwrap();
    let path = write_scenario(tmp.path(), "traced", "pcsm", Some("burst_injection"));
    let o = pcsm(&["run", path.to_str().unwrap(), "--seed-count", "1", "--seed", "7", "--trace"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = tmp.path().join("out/traced");
    assert!(!fs::read_to_string(dir.join("trace-7.log")).unwrap().is_empty());
    let csv = fs::read_to_string(dir.join("trust-7.csv")).unwrap();
    assert!(csv.starts_with("node,time,score\n"));
}

#[test]
fn vectors_match_the_checked_in_fixture() {
    let o = pcsm(&["vectors"]);
    assert!(o.status.success());
    let printed: Value = serde_json::from_slice(&o.stdout).unwrap();
    let stored: Value = serde_json::from_str(&fs::read_to_string(fixture()).unwrap()).unwrap();
    assert_eq!(printed, stored);
}

#[test]
fn analytic_prints_both_occupancy_forms() {
    let o = pcsm(&["analytic"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("as printed"));
    assert!(text.contains("offered load"));
    assert!(text.contains("steps to blacklist from t0=0.8"));
}

#[test]
fn analytic_rejects_out_of_range_theta() {
    let o = pcsm(&["analytic", "--theta", "0.9", "--t0", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn matrix_warns_about_missing_stacks() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("scenarios");
    fs::create_dir(&dir).unwrap();
    write_scenario(&dir, "flood_vanilla", "vanilla", Some("complete_flooding"));
    write_scenario(&dir, "flood_pcsm", "pcsm", Some("complete_flooding"));
    let out = tmp.path().join("matrix");
    let o = pcsm(&["matrix", dir.to_str().unwrap(), "--seed-count", "1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("no csm scenario"), "{err}");
    assert!(err.contains("no secupan scenario"), "{err}");
    assert_eq!(fs::read_to_string(out.join("matrix.jsonl")).unwrap().lines().count(), 2);
    assert!(out.join("matrix.txt").exists());
}

#[test]
fn empty_matrix_dir_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(pcsm(&["matrix", tmp.path().to_str().unwrap()]).status.code(), Some(2));
}
