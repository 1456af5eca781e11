//! End-to-end tests of the `unravel` binary: exit codes, produced files,
//! and byte-level determinism of runs.

use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

const BIN: &str = env!("CARGO_BIN_EXE_unravel");

fn write_cfg(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn run_cli(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn binary")
}

fn file_hash(path: &Path) -> String {
    let bytes = std::fs::read(path).unwrap();
    format!("{:x}", Sha256::digest(&bytes))
}

const INTEGRATE_CFG: &str = "
[experiment]
mode = integrate
t0 = 0
t1 = 0.5
dt = 1e-3

[equation]
dim = 2
ham_term = const(0.5) * sigma3
lindblad = sigma_minus
rate = const(0.3)

[initial]
rho = excited
";

const UNRAVEL_CFG: &str = "
[experiment]
mode = unravel
t0 = 0
t1 = 0.3
dt = 1e-3
n_traj = 400
seed = 11

[equation]
dim = 2
ham_term = const(0.5) * sigma3
rate = const(0.5)
rate = const(0.2)
rate = -0.3

[initial]
rho = excited
";

#[test]
fn validate_passes_on_good_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "good.cfg", UNRAVEL_CFG);
    let out = run_cli(&["validate", "--config", cfg.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.contains("validation: PASS"), "stdout: {stdout}");
    assert!(stdout.contains("pairing constraint: satisfied"), "stdout: {stdout}");
}

#[test]
fn validate_rejects_bad_mode_with_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "bad.cfg", "[experiment]\nmode = warp\n");
    let out = run_cli(&["validate", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("ERROR "), "stderr: {stderr}");
    assert!(stderr.contains("unknown mode"), "stderr: {stderr}");
}

#[test]
fn missing_config_file_fails() {
    let out = run_cli(&["run", "--config", "/nonexistent/path.cfg"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("ERROR "));
}

#[test]
fn integrate_writes_density_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "int.cfg", INTEGRATE_CFG);
    let out_dir = dir.path().join("out");
    let out = run_cli(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let density = out_dir.join("density.csv");
    assert!(density.exists());
    let text = std::fs::read_to_string(&density).unwrap();
    let mut lines = text.lines();
    let meta = lines.next().unwrap();
    assert!(meta.starts_with("# config_sha256="), "meta: {meta}");
    assert!(meta.contains("seed="));
    let header = lines.next().unwrap();
    assert!(header.starts_with("t,re_rho_00,im_rho_00"), "header: {header}");
    assert!(header.ends_with("trace,min_eigenvalue"), "header: {header}");
    // 501 grid points for t in [0, 0.5] at dt = 1e-3
    assert_eq!(lines.count(), 501);
}

#[test]
fn unravel_writes_ensemble_bound_and_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "unr.cfg", UNRAVEL_CFG);
    let out_dir = dir.path().join("out");
    let out = run_cli(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    for name in ["ensemble.csv", "bound.csv", "trajectories.csv"] {
        assert!(out_dir.join(name).exists(), "missing {name}");
    }
    let traj = std::fs::read_to_string(out_dir.join("trajectories.csv")).unwrap();
    let ids: std::collections::BTreeSet<&str> = traj
        .lines()
        .skip(2)
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(ids.len(), 10, "expected the first 10 trajectories, got {ids:?}");
}

#[test]
fn runs_are_byte_identical_across_invocations_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "unr.cfg", UNRAVEL_CFG);
    let mut hashes = Vec::new();
    for (sub, threads) in [("a", None), ("b", None), ("c", Some("1"))] {
        let out_dir = dir.path().join(sub);
        let mut args = vec![
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ];
        if let Some(n) = threads {
            args.extend(["--threads", n]);
        }
        let out = run_cli(&args);
        assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
        hashes.push(file_hash(&out_dir.join("ensemble.csv")));
    }
    assert_eq!(hashes[0], hashes[1], "same seed, same invocation must match");
    assert_eq!(hashes[0], hashes[2], "single-threaded run must match default");
}

#[test]
fn seed_override_changes_monte_carlo_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "unr.cfg", UNRAVEL_CFG);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for (out_dir, seed) in [(&out_a, "11"), (&out_b, "12")] {
        let out = run_cli(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--seed",
            seed,
        ]);
        assert!(out.status.success());
    }
    assert_ne!(
        file_hash(&out_a.join("ensemble.csv")),
        file_hash(&out_b.join("ensemble.csv"))
    );
    // seed 11 matches the config's own seed, so it reproduces the default run
    let out_c = dir.path().join("c");
    let out = run_cli(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_c.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(
        file_hash(&out_a.join("ensemble.csv")),
        file_hash(&out_c.join("ensemble.csv"))
    );
}

#[test]
fn infeasible_pairing_fails_validation_with_exit_code() {
    // The user-specified shift c is below the -min(rate) bound, so the
    // paired jump rates would go negative.
    let cfg_text = "
[experiment]
mode = unravel
t0 = 0
t1 = 0.1
dt = 1e-3
n_traj = 10

[equation]
dim = 2
ham_term = const(0.5) * sigma3
rate = const(0.5)
rate = const(0.2)
rate = -9.0
c = const(1.0)

[initial]
rho = excited
";
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "bad.cfg", cfg_text);
    let out = run_cli(&["validate", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("ERROR "), "stderr: {stderr}");
    assert!(stderr.contains("pairing constraint"), "stderr: {stderr}");
}
