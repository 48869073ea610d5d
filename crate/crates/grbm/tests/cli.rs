//! End-to-end tests of the command-line runner: exit codes, error JSON on
//! stderr, output formats and flag handling.

use std::path::Path;
use std::process::{Command, Output};

use grbm::config::ExperimentConfig;
use grbm::presets::preset;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_grbm"))
}

fn small_dufresne(dir: &Path) -> std::path::PathBuf {
    let mut cfg = preset("dufresne-1d").unwrap();
    cfg.sim.t_max = 5.0;
    cfg.sim.burn_in = 1.0;
    cfg.sim.n_paths = 2;
    let path = dir.join("dufresne-small.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    path
}

fn stderr_error_kind(out: &Output) -> String {
    let doc: serde_json::Value =
        serde_json::from_slice(&out.stderr).expect("stderr is machine-readable JSON");
    doc["error"]["kind"].as_str().unwrap_or_default().to_string()
}

#[test]
fn validate_passes_on_bundled_wedge() {
    let out = bin().args(["validate", "--preset", "wedge-2d"]).output().unwrap();
    assert!(out.status.success(), "{out:?}");
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["valid"], true);
    assert_eq!(doc["skew_symmetry"]["passed"], true);
}

#[test]
fn validate_rejects_broken_data_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = preset("wedge-2d").unwrap();
    let mut doc: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
    // q_1 = n_1 violates tangentiality
    doc["data"]["Q"][0] = doc["data"]["N"][0].clone();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
    let out = bin().args(["validate", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_error_kind(&out), "validation");
}

#[test]
fn missing_config_is_a_config_error() {
    let out = bin().arg("validate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_error_kind(&out), "config");
}

#[test]
fn unknown_preset_is_a_config_error() {
    let out = bin().args(["validate", "--preset", "nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_error_kind(&out), "config");
}

#[test]
fn malformed_config_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{ not json").unwrap();
    let out = bin().args(["validate", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_error_kind(&out), "config");
}

#[test]
fn bar_check_emits_small_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset("wedge-2d").unwrap();
    cfg = cfg.with_option("n_points", serde_json::json!(25));
    let path = dir.path().join("wedge.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    let out = bin().args(["bar-check", "--config"]).arg(&path).output().unwrap();
    assert!(out.status.success(), "{out:?}");
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "x1,x2,residual_fd,residual_analytic");
    let mut max_fd = 0.0_f64;
    let mut rows = 0;
    for line in lines {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cols.len(), 4);
        max_fd = max_fd.max(cols[2].abs());
        rows += 1;
    }
    assert_eq!(rows, 25);
    assert!(max_fd < 1e-4, "max fd residual {max_fd}");
}

#[test]
fn density_evaluates_requested_points() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = preset("orthant-hr")
        .unwrap()
        .with_option("points", serde_json::json!([[0.5, 0.5], [1.0, 2.0]]));
    let path = dir.path().join("orthant.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    let out = bin().args(["density", "--config"]).arg(&path).output().unwrap();
    assert!(out.status.success(), "{out:?}");
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("x1,x2,log_density\n"));
    for line in text.lines().skip(1) {
        let v: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(v.is_finite());
    }
}

#[test]
fn density_requires_points_option() {
    let out = bin().args(["density", "--preset", "orthant-hr"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_error_kind(&out), "config");
}

#[test]
fn simulate_seed_flag_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_dufresne(dir.path());
    let run = |seed: &str| {
        let out = bin()
            .args(["simulate", "--config"])
            .arg(&cfg)
            .args(["--seed", seed])
            .output()
            .unwrap();
        assert!(out.status.success());
        out.stdout
    };
    let a = run("1");
    let b = run("1");
    let c = run("2");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn binary_output_has_magic_and_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_dufresne(dir.path());
    let out_path = dir.path().join("run.bin");
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{out:?}");
    let bytes = std::fs::read(&out_path).unwrap();
    assert_eq!(&bytes[..5], b"GRBM1");
    let word = |i: usize| {
        u64::from_le_bytes(bytes[5 + 8 * i..13 + 8 * i].try_into().unwrap()) as usize
    };
    let (n_paths, n_stored, dim) = (word(0), word(1), word(2));
    assert_eq!((n_paths, dim), (2, 1));
    assert_eq!(
        bytes.len(),
        5 + 3 * 8 + 8 * n_stored + 8 * n_paths * n_stored * dim
    );
}

#[test]
fn dufresne_reports_samples_and_ks() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset("dufresne-1d").unwrap();
    cfg.options.insert("n_samples".into(), serde_json::json!(500));
    let path = dir.path().join("d.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    let out = bin().args(["dufresne", "--config"]).arg(&path).output().unwrap();
    assert!(out.status.success(), "{out:?}");
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["n"], 500);
    assert_eq!(doc["samples"].as_array().unwrap().len(), 500);
    assert!(doc["ks"]["d"].as_f64().unwrap() < 0.2);
}

#[test]
fn pitman_chain_emits_one_row_per_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset("alternating-1d").unwrap();
    cfg.sim.t_max = 30.0;
    cfg.sim.burn_in = 0.0;
    cfg.sim.n_paths = 3;
    cfg.options.insert("mode".into(), serde_json::json!("chain"));
    let path = dir.path().join("chain.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    let out = bin().args(["pitman", "--config"]).arg(&path).output().unwrap();
    assert!(out.status.success(), "{out:?}");
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "path,j1,j2");
    assert_eq!(lines.len(), 4);
}

#[test]
fn pitman_requires_mode() {
    let out = bin()
        .args(["pitman", "--preset", "alternating-1d"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_error_kind(&out), "config");
}

#[test]
fn emitted_config_round_trips() {
    for name in grbm::presets::PRESET_NAMES {
        let cfg = preset(name).unwrap();
        let echo = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(echo.to_json(), cfg.to_json(), "{name}");
    }
}
