//! End-to-end runs of the `fwdreg` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn fwdreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fwdreg"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        cmd,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    fwdreg(&args)
}

const SMALL_LINEAR: &str = r#"
seed = 5

[plant]
kind = "linear"
n = 4
alpha = 1.0
seed = 2

[scenario.step]
dt = 0.05
t_final = 20.0
d = { norm = 0.1 }
y_ref = { norm = 0.1 }

[sweep]
d_norms = [0.0, 1.0]
y_norms = [0.0, 0.5, 1.0]
dt = 0.05
t_final = 20.0
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn zero_scenario_writes_all_zero_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("simulate", &configs().join("linear.toml"), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("zero.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# config-sha256="));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header[0], "t");
    let mut rows = 0;
    for line in lines {
        let values: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert!(values[1..].iter().all(|&v| v == 0.0), "{line}");
        rows += 1;
    }
    assert!(rows > 1);
}

#[test]
fn repeated_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_LINEAR);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run("simulate", &cfg, &a, &[]).status.code(), Some(0));
    assert_eq!(run("simulate", &cfg, &b, &[]).status.code(), Some(0));
    for f in ["step.csv", "step.json", "simulate.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_override_is_stamped_and_changes_draws() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_LINEAR);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run("simulate", &cfg, &a, &[]).status.code(), Some(0));
    assert_eq!(run("simulate", &cfg, &b, &["--seed", "99"]).status.code(), Some(0));
    let ta = fs::read_to_string(a.join("step.csv")).unwrap();
    let tb = fs::read_to_string(b.join("step.csv")).unwrap();
    assert!(ta.lines().next().unwrap().ends_with("seed=5"));
    assert!(tb.lines().next().unwrap().ends_with("seed=99"));
    assert_ne!(ta.lines().nth(5), tb.lines().nth(5));
}

#[test]
fn sweep_covers_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_LINEAR);
    let out = dir.path().join("o");
    let o = run("sweep", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 2 + 6);
    assert_eq!(fs::read_dir(out.join("sweep")).unwrap().count(), 6);
}

#[test]
fn verify_passes_on_scalar_plant() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("verify", &configs().join("scalar.toml"), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(v["pass"], true);
}

#[test]
fn infeasible_gains_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("gains", &configs().join("rank_deficient.toml"), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("gains.json")).unwrap()).unwrap();
    assert_eq!(v["feasible"], false);
    assert_eq!(v["lambda"], 0.0);
}

#[test]
fn bad_configuration_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &SMALL_LINEAR.replace("alpha = 1.0", "alpha = 1.0\nalhpa = 2.0"),
    );
    let o = run("gains", &cfg, &dir.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("alhpa"));

    let o = run("gains", &dir.path().join("missing.toml"), &dir.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(2));

    let o = fwdreg(&["gains"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn nonpositive_step_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL_LINEAR.replacen("dt = 0.05", "dt = -1.0", 1));
    let o = run("simulate", &cfg, &dir.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}
