//! End-to-end CLI checks: determinism of the statistical outputs across
//! runs and thread counts, data simulation, and requirement errors.

use std::fs;
use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_particle-mcmc");

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("exp.cfg");
    fs::write(&path, body).unwrap();
    path
}

fn small_config() -> &'static str {
    "[model]\nkind = lgssm\ndim = 2\nhorizon = 3\nlambda = 1.0\n\n\
     [run]\nstrategies = p-mala, csmc\nparticles = 6\niters = 200\nburn_in = 50\n\
     chains = 2\ncalibration_iters = 150\ndelta0 = 0.05\n"
}

/// ess.csv minus its timing column, which is measured and exempt from the
/// byte-identity guarantee.
fn ess_without_timing(dir: &Path) -> String {
    let text = fs::read_to_string(dir.join("ess.csv")).unwrap();
    text.lines()
        .map(|line| {
            let cols: Vec<&str> = line.split(',').collect();
            cols[..cols.len() - 1].join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn run(config: &Path, out: &Path, seed: u64, threads: usize) {
    let status = Command::new(BIN)
        .args([
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            &seed.to_string(),
            "--threads",
            &threads.to_string(),
        ])
        .status()
        .expect("binary runs");
    assert!(status.success(), "experiment run failed");
}

#[test]
fn outputs_are_byte_identical_across_runs_and_thread_counts() {
    let root = tempfile::tempdir().unwrap();
    let config = write_config(root.path(), small_config());
    let out1 = root.path().join("a");
    let out2 = root.path().join("b");
    let out3 = root.path().join("c");
    run(&config, &out1, 7, 1);
    run(&config, &out2, 7, 1);
    run(&config, &out3, 7, 4);

    for file in ["acceptance.csv", "data.csv", "p-mala/energy.csv", "p-mala/delta.csv", "csmc/energy.csv"] {
        let a = fs::read(out1.join(file)).unwrap();
        let b = fs::read(out2.join(file)).unwrap();
        let c = fs::read(out3.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
        assert_eq!(a, c, "{file} differs across thread counts");
    }
    let a = ess_without_timing(&out1);
    assert_eq!(a, ess_without_timing(&out2));
    assert_eq!(a, ess_without_timing(&out3));
}

#[test]
fn different_seeds_give_different_chains() {
    let root = tempfile::tempdir().unwrap();
    let config = write_config(root.path(), small_config());
    let out1 = root.path().join("a");
    let out2 = root.path().join("b");
    run(&config, &out1, 7, 2);
    run(&config, &out2, 8, 2);
    let a = fs::read(out1.join("p-mala/energy.csv")).unwrap();
    let b = fs::read(out2.join("p-mala/energy.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn simulate_writes_reproducible_observations() {
    let root = tempfile::tempdir().unwrap();
    let config = write_config(
        root.path(),
        "[model]\nkind = stochvol\ndim = 3\nhorizon = 5\ntau = 0.5\n\n\
         [run]\nstrategies = csmc\n",
    );
    let out1 = root.path().join("obs1.csv");
    let out2 = root.path().join("obs2.csv");
    for out in [&out1, &out2] {
        let status = Command::new(BIN)
            .args([
                "simulate",
                "--config",
                config.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--seed",
                "99",
            ])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = fs::read_to_string(&out1).unwrap();
    assert_eq!(a, fs::read_to_string(&out2).unwrap());
    // T rows, D columns, header-free.
    let rows: Vec<&str> = a.lines().collect();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.split(',').count() == 3));
    assert!(rows[0].split(',').all(|v| v.parse::<f64>().is_ok()));
}

#[test]
fn requirement_mismatch_is_reported_with_the_requirement() {
    // p-mgrad needs Gaussian dynamics with constant covariances; the model
    // is fine here, so instead probe an unknown strategy and a config error.
    let root = tempfile::tempdir().unwrap();
    let config = write_config(
        root.path(),
        "[model]\nkind = lgssm\ndim = 1\nhorizon = 2\n\n[run]\nstrategies = p-warp\n",
    );
    let out = root.path().join("out");
    let output = Command::new(BIN)
        .args(["--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!output.status.success(), "unknown strategy must fail the run");
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("p-warp"), "error should name the strategy: {stderr}");
}

#[test]
fn env_overrides_take_effect() {
    let root = tempfile::tempdir().unwrap();
    let config = write_config(root.path(), small_config());
    let out = root.path().join("out");
    let output = Command::new(BIN)
        .args(["--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .env("PMCMC_RUN_STRATEGIES", "p-nonexistent")
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("p-nonexistent"), "override ignored: {stderr}");
}
