use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_chromident");

fn config(extra: &str, grid: &str, concentration: f64) -> String {
    format!(
        r#"{{
    "column": {{"length": 1.0, "velocity": 1.0, "porosity": 0.5}},
    "grid": {grid},
    "injection": {{"duration": 6.0, "segments": [{{"start": 0.0, "end": 1.0, "concentration": [{concentration}]}}]}},
    "model": {{"family": "langmuir"}},
    "parameters": [
        {{"name": "K", "range": [0.01, 0.05], "value": 0.0388, "guess": 0.035}},
        {{"name": "N*", "range": [50, 150], "value": 107, "guess": 100}}
    ]{extra}
}}"#
    )
}

const GRID: &str = r#"{"dt": 0.05, "cfl_target": 0.8}"#;

fn run(args: &[&str], cfg: &Path, out: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .env("CHROMIDENT_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn simulate_writes_chromatogram_and_grid_summary() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "sim.json", &config("", GRID, 10.0));
    let out = run(&["simulate"], &cfg, dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("dt=0.05") && stdout.contains("lambda_max="), "{stdout}");

    let csv = fs::read_to_string(dir.path().join("chromatogram.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t,c1");
    // 6 / 0.05 = 120 steps plus the initial row.
    assert_eq!(lines.len() - 1, 121);
}

#[test]
fn simulate_zero_injection_gives_zero_outlet() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "sim.json", &config("", GRID, 0.0));
    let out = run(&["simulate"], &cfg, dir.path());
    assert_eq!(code(&out), 0);
    let csv = fs::read_to_string(dir.path().join("chromatogram.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let c: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(c, 0.0);
    }
}

#[test]
fn cfl_target_above_one_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let grid = r#"{"dt": 0.05, "cfl_target": 5.0}"#;
    let cfg = write(dir.path(), "sim.json", &config("", grid, 10.0));
    let out = run(&["simulate"], &cfg, dir.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid.cfl_target"));
}

#[test]
fn explicit_coarse_space_step_is_reported_as_instability() {
    let dir = TempDir::new().unwrap();
    let grid = r#"{"dt": 0.05, "dz": 0.5}"#;
    let cfg = write(dir.path(), "sim.json", &config("", grid, 10.0));
    let out = run(&["simulate"], &cfg, dir.path());
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_field_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let text = config("", GRID, 10.0).replace("\"porosity\"", "\"porosty\"");
    let cfg = write(dir.path(), "sim.json", &text);
    let out = run(&["simulate"], &cfg, dir.path());
    assert_eq!(code(&out), 2);
}

fn identify_setup(dir: &Path) -> std::path::PathBuf {
    let sim = write(dir, "sim.json", &config("", GRID, 10.0));
    assert_eq!(code(&run(&["simulate"], &sim, dir)), 0);
    let extra = r#",
    "experiments": [{"chromatogram": "chromatogram.csv"}],
    "optimizer": {"target_fitness": 1e-12, "seed": 3, "runs": 2}"#;
    write(dir, "fit.json", &config(extra, GRID, 10.0))
}

#[test]
fn identify_recovers_simulated_parameters() {
    let dir = TempDir::new().unwrap();
    let cfg = identify_setup(dir.path());
    let out_dir = dir.path().join("fit");
    let out = run(&["identify"], &cfg, &out_dir);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    let k = report["parameters"]["K"].as_f64().unwrap();
    let n = report["parameters"]["N*"].as_f64().unwrap();
    assert!((k - 0.0388).abs() < 1e-4 * 0.0388, "K = {k}");
    assert!((n - 107.0).abs() < 1e-4 * 107.0, "N* = {n}");
    assert_eq!(report["converged"], true);
    assert_eq!(report["termination"], "target_fitness");
    assert_eq!(report["config_digest"].as_str().unwrap().len(), 64);

    assert!(out_dir.join("best_chromatogram_1.csv").exists());
    let trace = fs::read_to_string(out_dir.join("fitness_trace.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("evaluation,best_fitness"));
}

#[test]
fn identify_without_chromatogram_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let extra = r#",
    "experiments": [{"chromatogram": "absent.csv"}]"#;
    let cfg = write(dir.path(), "fit.json", &config(extra, GRID, 10.0));
    let out = run(&["identify"], &cfg, dir.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.csv"));
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn benchmark_output_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = identify_setup(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&run(&["benchmark", "--runs", "2"], &cfg, &a)), 0);
    assert_eq!(code(&run(&["benchmark", "--runs", "2"], &cfg, &b)), 0);
    let first = fs::read(a.join("benchmark.json")).unwrap();
    assert_eq!(first, fs::read(b.join("benchmark.json")).unwrap());

    let report: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(report["runs"], 2);
    assert_eq!(report["outcomes"].as_array().map(Vec::len), Some(2));
    assert_eq!(report["p_converge"].as_array().map(Vec::len), Some(3));
}

#[test]
fn identify_output_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = identify_setup(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run(&["identify", "--seed", "9"], &cfg, &a);
    run(&["identify", "--seed", "9"], &cfg, &b);
    for name in ["report.json", "fitness_trace.csv", "best_chromatogram_1.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}
