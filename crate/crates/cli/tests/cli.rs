use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn degpar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_degpar")).args(args).output().unwrap()
}

const SMALL: &str = r#"
name = "cli"

[[run]]
name = "beta-half"
checks = ["partition", "fichera", "solve", "verify"]
[run.operator]
builtin = "heston"
sigma = 0.4
rho = -0.5
kappa = 1.0
theta = 0.04
r = 0.05
[run.domain]
t_final = 0.5
bounds = [[-1.0, 1.0], [0.0, 0.4]]
truncated = ["x1-", "x1+", "x2+"]
[run.grid]
nodes = [11, 11]
time_levels = 6
[run.data]
g = "max(1 - exp(x1), 0)"
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("suite.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn describe_prints_coefficients() {
    let out = degpar(&["describe", "heston"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("kappa"), "{text}");
    let bad = degpar(&["describe", "nope"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn run_writes_artifacts_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    let out = degpar(&["run", &cfg, "--out", out_dir.to_str().unwrap(), "--jobs", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let run = out_dir.join("beta-half");
    assert!(run.join("report.json").exists());
    assert!(run.join("MANIFEST.sha256").exists());
    let fichera = fs::read_to_string(run.join("fichera.txt")).unwrap();
    assert!(fichera.contains("Sigma2"), "{fichera}");
}

#[test]
fn classify_skips_solves() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    let out = degpar(&["classify", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out_dir.join("beta-half/partition.csv").exists());
    assert!(!out_dir.join("beta-half/solution").exists());
}

#[test]
fn malformed_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "name = \"x\"\n[[run]]\nname = 3\n");
    let out = degpar(&["run", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}
