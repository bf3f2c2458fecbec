use std::process::Command;

use serde_json::Value;

fn phenowave(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_phenowave")).args(args).output().unwrap()
}

fn write_config(dir: &std::path::Path, cfg: &phenowave::operators::ModelConfig) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string(cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn read_json(path: std::path::PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn mucrit_reports_half_on_standard_preset() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &phenowave::operators::ModelConfig::standard(401, 0.25));
    let out = phenowave(&["mucrit", "--config", &config, "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = read_json(dir.path().join("mucrit.json"));
    let mu0 = v["mu0"].as_f64().unwrap();
    assert!((mu0 - 0.5).abs() < 0.05, "mu0 = {mu0}");
    let manifest = read_json(dir.path().join("manifest.json"));
    assert_eq!(manifest["subcommand"], "mucrit");
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = phenowave(&["eigen", "--config", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(phenowave(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn simulate_front_moves_near_minimal_speed() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = phenowave::operators::ModelConfig::standard(21, 0.25);
    cfg.a = phenowave::operators::PresetSpec::new("one_minus_quadratic");
    cfg.eps = 1e-2;
    let config = write_config(dir.path(), &cfg);
    let out_dir = dir.path().join("out");
    let out = phenowave(&["simulate", "--config", &config, "--tmax", "40", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = read_json(out_dir.join("simulate.json"));
    let ratio = v["c_obs"].as_f64().unwrap() / v["c_star"].as_f64().unwrap();
    assert!((ratio - 1.0).abs() < 0.05, "c_obs / c* = {ratio}");
}
