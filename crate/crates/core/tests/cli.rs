use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn lqmfg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lqmfg")).args(args).output().expect("binary runs")
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

#[test]
fn equilibrium_scenario_has_unit_riccati_and_zero_adjoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = lqmfg(&["solve", scenario("equilibrium.cfg").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let csv = std::fs::read_to_string(dir.path().join("solution.csv")).unwrap();
    assert!(column(&csv, "P_norm").iter().all(|v| (v - 1.0).abs() <= 1e-12));
    assert!(column(&csv, "r_0").iter().all(|v| *v == 0.0));
    assert!(dir.path().join("mc.csv").exists());
    let report = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.contains("regime = dissipative"));
}

#[test]
fn delay_verify_reports_dissipative_regime() {
    let out = lqmfg(&["verify", scenario("delay.cfg").to_str().unwrap()]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("regime = dissipative"));
}

#[test]
fn uncertified_picard_fails_with_no_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let out = lqmfg(&["solve", scenario("no_certificate.cfg").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let report = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.contains("no-certificate"), "{report}");
}

#[test]
fn steps_and_seed_flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let cfg = scenario("equilibrium.cfg");
    let out = lqmfg(&["solve", cfg.to_str().unwrap(), "--out", d, "--steps", "40", "--seed", "5"]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("solution.csv")).unwrap();
    assert_eq!(csv.lines().count(), 42);
    let first = std::fs::read(dir.path().join("mc.csv")).unwrap();
    lqmfg(&["solve", cfg.to_str().unwrap(), "--out", d, "--steps", "40", "--seed", "6"]);
    assert_ne!(first, std::fs::read(dir.path().join("mc.csv")).unwrap());
}

#[test]
fn sweep_writes_one_directory_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.cfg");
    let out_dir = dir.path().join("runs");
    std::fs::write(
        &cfg,
        format!("name = sweep\nkind = scalar\nqbar = 0.5\nqbart = 0.5\nrun = riccati,decoupled\nout = {}\n", out_dir.display()),
    )
    .unwrap();
    let out = lqmfg(&["sweep", cfg.to_str().unwrap(), "--param", "s", "--values", "-0.5,-1,-2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for v in ["-0.5", "-1", "-2"] {
        assert!(out_dir.join(format!("s={v}")).join("solution.csv").exists());
    }
}

#[test]
fn bad_configs_exit_with_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "name = x\nkind = delay\nrun = riccati\nmystery = 3\n").unwrap();
    let out = lqmfg(&["solve", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mystery"));
    let out = lqmfg(&["solve", dir.path().join("missing.cfg").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
