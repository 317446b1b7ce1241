//! End-to-end runs of the `tvsaddle` binary.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tvsaddle"))
}

const SMALL: &str = r#"
scenario = "quad-toy"

[sweep]
rates = [0.02, 0.04]
modes = ["plain", "compensated"]
seeds = 2
master_seed = 4

[integrator]
kappa = 2.0
dt = 0.005
horizon_scaled = 1.0
stride = 4

[output]
dir = "out"
"#;

#[test]
fn run_writes_versioned_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let status = bin().args(["run", cfg.to_str().unwrap(), "--workers", "2"]).status().unwrap();
    assert!(status.success());
    let out = dir.path().join("out");
    for name in ["runs.csv", "aggregates.csv", "constants.csv"] {
        let text = std::fs::read_to_string(out.join(name)).unwrap();
        assert!(text.starts_with("# schema_version=1\n"), "{name}");
    }
    let runs = std::fs::read_to_string(out.join("runs.csv")).unwrap();
    // Comment, header and one row per (a, mode, seed).
    assert_eq!(runs.lines().count(), 2 + 2 * 2 * 2);
    assert!(out.join("error_vs_a.dat").exists());
}

#[test]
fn seed_override_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let run = |seed: &str, sub: &str| {
        let out = dir.path().join(sub);
        let ok = bin()
            .args(["run", cfg.to_str().unwrap(), "--seed", seed, "--out", out.to_str().unwrap()])
            .status()
            .unwrap()
            .success();
        assert!(ok);
        std::fs::read(out.join("runs.csv")).unwrap()
    };
    assert_ne!(run("1", "a"), run("2", "b"));
    assert_eq!(run("1", "a"), run("1", "c"));
}

#[test]
fn invalid_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, SMALL.replace("seeds = 2", "seeds = 2\nbogus = 1")).unwrap();
    let out = bin().args(["check", cfg.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 8, column 1"), "{err}");
}

#[test]
fn missing_config_exits_with_one() {
    let out = bin().args(["check", "/nonexistent/cfg.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn constants_prints_one_row_per_rate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = bin().args(["constants", cfg.to_str().unwrap()]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(1).unwrap().ends_with("true"));
}
