//! End-to-end runs of the `milne-bl` binary: exit codes, outputs and stamps.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, command: &str, config: &str, extra: &[&str]) -> Output {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_milne-bl"))
        .arg(command)
        .arg(&cfg)
        .arg("--output-dir")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap()
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("out/summary.json")).unwrap()).unwrap()
}

const SOLVE: &str = r#"
command = "milne-solve"
[milne]
epsilon = 0.1
n_exponent = 0.25
profile = { kind = "constant", r1 = 1.0, r2 = 1.0 }
datum = { kind = "sin_phi", amp = 1.0 }
grid = { n_eta = 48, n_phi = 8, n_psi = 4 }
"#;

#[test]
fn solve_writes_stamped_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), "milne-solve", SOLVE, &["--threads", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(tmp.path());
    assert_eq!(s["status"], "ok");
    let hash = s["config_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    for name in ["field.csv", "depth.csv"] {
        let text = fs::read_to_string(tmp.path().join("out").join(name)).unwrap();
        let first = text.lines().next().unwrap();
        assert!(first.starts_with("# milne-bl ") && first.ends_with(&format!("config_hash={hash}")), "{first}");
    }
    let svg = fs::read_to_string(tmp.path().join("out/decay.svg")).unwrap();
    assert!(svg.contains(&format!("config_hash={hash}")));
    let field = fs::read_to_string(tmp.path().join("out/field.csv")).unwrap();
    assert_eq!(field.lines().nth(1), Some("eta,phi,psi,value"));
    assert_eq!(field.lines().count(), 2 + 48 * 8 * 4);
}

#[test]
fn incompatible_data_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = SOLVE.replace(r#"datum = { kind = "sin_phi", amp = 1.0 }"#, "datum = { kind = \"constant\", value = 1.0 }\nboundary = \"diffusive\"");
    let out = run(tmp.path(), "milne-solve", &cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(summary(tmp.path())["status"], "error");
}

#[test]
fn nonconvergence_exit_three_records_history() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = SOLVE.replace("n_exponent = 0.25", "n_exponent = 0.25\nmax_iterations = 2\nfixed_point_tol = 1e-15");
    let out = run(tmp.path(), "milne-solve", &cfg, &[]);
    assert_eq!(out.status.code(), Some(3));
    let s = summary(tmp.path());
    assert_eq!(s["exit_code"], 3);
    assert_eq!(s["residual_history"].as_array().map(Vec::len), Some(2));
}

#[test]
fn parse_error_reports_line_and_column() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = SOLVE.replace("epsilon = 0.1", "epsilon = 0.1\nbogus = 3");
    let out = run(tmp.path(), "milne-solve", &cfg, &[]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 5, column 1"), "{err}");
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn command_must_match_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), "decay-fit", SOLVE, &[]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(tmp.path(), "no-such-command", SOLVE, &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn selftest_passes_and_detects_fault() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), "selftest", "command = \"selftest\"\n", &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(summary(tmp.path())["selftest"]["passed"], true);
    let out = run(tmp.path(), "selftest", "command = \"selftest\"\n[selftest]\nfault = \"corrupt_weights\"\n", &[]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(summary(tmp.path())["selftest"]["passed"], false);
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(run(a.path(), "milne-solve", SOLVE, &["--threads", "1"]).status.code(), Some(0));
    assert_eq!(run(b.path(), "milne-solve", SOLVE, &["--threads", "3"]).status.code(), Some(0));
    for name in ["summary.json", "field.csv", "depth.csv", "decay.svg"] {
        let x = fs::read(a.path().join("out").join(name)).unwrap();
        let y = fs::read(b.path().join("out").join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
}
