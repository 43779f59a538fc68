//! The `accrete` binary: artifacts on disk and process exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 3
[grid]
nx = 13
ny = 13
[material]
mu_a = 2.0
[material.force]
rho_a = 0.04
rho_r = 0.02
[time]
t_final = 1.0
tau = 0.1
[output]
stride = 5
"#;

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn accrete(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_accrete")).args(args).output().unwrap()
}

fn with_config(name: &str, toml: &str, mode: &str) -> (Output, PathBuf) {
    let dir = scratch(name);
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, toml).unwrap();
    let out = dir.join("out");
    let o = accrete(&[mode, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    (o, out)
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn simulate_writes_listed_artifacts() {
    let (o, out) = with_config("simulate", SMALL, "simulate");
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.starts_with("mode: simulate"));
    assert!(stdout.trim_end().ends_with("status: PASS"));

    let m = manifest(&out);
    assert_eq!(m["mode"], "simulate");
    assert_eq!(m["passed"], true);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    let files: Vec<&str> = m["files"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap()).collect();
    for expected in ["theta.csv", "y_0000.csv", "y_0005.csv", "y_0010.csv", "steps.jsonl", "coupling.jsonl"] {
        assert!(files.contains(&expected), "{expected} missing from {files:?}");
    }
    for f in &files {
        assert!(out.join(f).is_file(), "{f}");
    }
    let steps = std::fs::read_to_string(out.join("steps.jsonl")).unwrap();
    assert_eq!(steps.lines().count(), 10);
}

#[test]
fn quiet_suppresses_the_summary() {
    let dir = scratch("quiet");
    let o = accrete(&["gradcheck", "--quiet", "--out", dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    assert_eq!(manifest(&dir)["mode"], "gradcheck");
}

#[test]
fn eikonal_mode_reports_bounds() {
    let (o, out) = with_config("eikonal", SMALL, "eikonal");
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("theta.csv").is_file());
    assert_eq!(manifest(&out)["passed"], true);
}

#[test]
fn seed_override_changes_the_hash() {
    let dir = scratch("seed");
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let hash = |seed: &str, name: &str| {
        let out = dir.join(name);
        let o = accrete(&["gradcheck", "--quiet", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed-override", seed]);
        assert_eq!(o.status.code(), Some(0));
        manifest(&out)["config_hash"].as_str().unwrap().to_owned()
    };
    assert_eq!(hash("3", "a"), hash("3", "b"));
    assert_ne!(hash("3", "a"), hash("4", "c"));
}

#[test]
fn step_not_below_width_is_a_config_error() {
    let bad = SMALL.replace("tau = 0.1", "tau = 0.25").replace("mu_a = 2.0", "mu_a = 2.0\neps = 0.2");
    let (o, out) = with_config("tau_ge_eps", &bad, "simulate");
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("tau"));
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn malformed_toml_is_a_config_error() {
    let (o, _) = with_config("malformed", "[grid]\nnx = \"many\"\n", "simulate");
    assert_eq!(o.status.code(), Some(2));
    let (o, _) = with_config("unknown_key", "[grid]\nnz = 4\n", "simulate");
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_and_missing_files() {
    assert_eq!(accrete(&["bogus"]).status.code(), Some(2));
    assert_eq!(accrete(&[]).status.code(), Some(2));
    assert_eq!(accrete(&["--help"]).status.code(), Some(0));
    assert_eq!(accrete(&["simulate", "--config", "/nonexistent/run.toml"]).status.code(), Some(1));
}
