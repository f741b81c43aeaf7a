//! End-to-end tests of the `grassopt` binary: flag handling and the exit-code
//! contract (0 ok, 2 config error, 3 numerical failure, 4 rate-band failure).

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

fn grassopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grassopt"))
        .args(args)
        .env_remove("GRASSOPT_THREADS")
        .output()
        .expect("binary runs")
}

fn write_tiny_config(dir: &Path) -> String {
    let path = dir.join("config.json");
    fs::write(
        &path,
        r#"{
        "grid": {"side": 4, "sigma1": 0.8, "sigma2": 0.5},
        "p": 2,
        "oracle": {"kind": "exact"},
        "optimizer": {"kind": "fixed", "step": {"kind": "constant", "eta": 0.2}},
        "iters": 10,
        "seeds": [1, 2],
        "lambda": 0.6,
        "sample_sizes": [4],
        "test_per_class": 40
    }"#,
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn covtable_runs_and_prints_table() {
    let dir = tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = grassopt(&["covtable", "--config", &config, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("n_samples"));
    assert!(out_dir.join("covtable.csv").exists());
    assert!(out_dir.join("covtable.json").exists());
}

#[test]
fn simulate_with_pgm_preview() {
    let dir = tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let out_dir = dir.path().join("sim");
    let out = grassopt(&[
        "simulate",
        "--config",
        &config,
        "--out",
        out_dir.to_str().unwrap(),
        "--pgm",
    ]);
    assert!(out.status.success());
    assert!(out_dir.join("images_seed1_n4_class1.grmx").exists());
    assert!(out_dir.join("images_seed1_n4_class1.pgm").exists());
}

#[test]
fn optimize_seed_override_and_evaluate_pipeline() {
    let dir = tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let out_dir = dir.path().join("opt");
    let out = grassopt(&[
        "optimize",
        "--config",
        &config,
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "9",
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("trace_seed9.csv").exists());
    assert!(!out_dir.join("trace_seed1.csv").exists());

    let eval = grassopt(&[
        "evaluate",
        "--config",
        &config,
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "9",
        "--point",
        out_dir.join("point_seed9.grmx").to_str().unwrap(),
    ]);
    assert!(eval.status.success(), "stderr: {}", String::from_utf8_lossy(&eval.stderr));
    let stdout = String::from_utf8_lossy(&eval.stdout);
    assert!(stdout.contains("\"auc\""), "stdout: {stdout}");

    // Evaluating under the un-overridden config (different seed list, hence
    // different hash) is a config error.
    let mismatch = grassopt(&[
        "evaluate",
        "--config",
        &config,
        "--out",
        out_dir.to_str().unwrap(),
        "--point",
        out_dir.join("point_seed9.grmx").to_str().unwrap(),
    ]);
    assert_eq!(mismatch.status.code(), Some(2));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempdir().unwrap();
    let bad_lambda = dir.path().join("bad.json");
    fs::write(&bad_lambda, r#"{"preset": "fig4-desk", "lambda": 1.5}"#).unwrap();
    let out = grassopt(&["covtable", "--config", bad_lambda.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let unknown = dir.path().join("unknown.json");
    fs::write(&unknown, r#"{"preset": "table9"}"#).unwrap();
    let out = grassopt(&["optimize", "--config", unknown.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let missing = dir.path().join("does-not-exist.json");
    let out = grassopt(&["simulate", "--config", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn threads_env_overrides_flag_and_rejects_junk() {
    let dir = tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_grassopt"))
        .args(["covtable", "--config", &config, "--out", dir.path().join("o").to_str().unwrap()])
        .env("GRASSOPT_THREADS", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = Command::new(env!("CARGO_BIN_EXE_grassopt"))
        .args(["covtable", "--config", &config, "--out", dir.path().join("o2").to_str().unwrap(), "--threads", "1"])
        .env("GRASSOPT_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
}

#[test]
fn ratecheck_passes_on_default_preset() {
    let dir = tempdir().unwrap();
    let config = dir.path().join("rc.json");
    fs::write(&config, r#"{"preset": "ratecheck"}"#).unwrap();
    let out_dir = dir.path().join("rate");
    let out = grassopt(&[
        "ratecheck",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "stdout: {} stderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("ratecheck: pass"));
    assert!(out_dir.join("ratecheck.json").exists());
}

#[test]
fn ratecheck_band_failure_exits_4() {
    // A tiny noise amplitude leaves the best-gradient series on the geometric
    // transient, far steeper than the band, so the gate must fail.
    let dir = tempdir().unwrap();
    let config = dir.path().join("rc-fail.json");
    fs::write(
        &config,
        r#"{"preset": "ratecheck", "iters": 300, "seeds": [0, 1],
            "ratecheck": {"n": 16, "p": 2, "noise_amplitude": 0.01,
                          "exponent": 0.75, "control_amplitude": 4.0}}"#,
    )
    .unwrap();
    let out = grassopt(&[
        "ratecheck",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("rate").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4), "stdout: {}", String::from_utf8_lossy(&out.stdout));
}
