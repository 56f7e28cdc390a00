use std::io::Write as _;
use std::path::PathBuf;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn problem(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../problems").join(name)
}

fn ncpoly(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncpoly")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn bounds(v: &Value) -> Vec<f64> {
    v["records"].as_array().unwrap().iter().map(|r| r["bound"].as_f64().unwrap()).collect()
}

#[test]
fn projector_pair_is_flat_at_order_two() {
    let p = problem("projector-pair.ncp");
    let out = ncpoly(&[p.to_str().unwrap(), "-k", "2", "--extract"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    for b in bounds(&v) {
        assert!((b + 0.75).abs() < 1e-6, "{b}");
    }
    assert_eq!(v["records"][1]["flat"], Value::Bool(true));
    assert_eq!(v["optimizer"]["dimension"], 2);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("\"flat\": true") && text.contains("\"dimension\": 2"));
}

#[test]
fn constrained_state_values() {
    let p = problem("constrained-state.ncp");
    let out = ncpoly(&[p.to_str().unwrap(), "--order", "2", "--extract", "--certify", "--seed", "11"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let b = bounds(&v);
    assert_eq!(b.len(), 2);
    for x in b {
        assert!((x + 2.0 / 3.0).abs() < 1e-6, "{x}");
    }
    assert_eq!(v["records"][1]["flat"], Value::Bool(true));
    assert_eq!(v["optimizer"]["dimension"], 2);
    assert_eq!(v["seed"], 11);
    assert!(v["certificate"]["residual_norm"].as_f64().unwrap() < 1e-8);
}

#[test]
fn chsh_order_one() {
    let p = problem("chsh.ncp");
    let out = ncpoly(&[p.to_str().unwrap(), "-k", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let b = bounds(&json(&out));
    assert!((b[0] - 2.0 * 2f64.sqrt()).abs() < 1e-6, "{b:?}");
}

#[test]
fn stop_on_flat_and_table() {
    let p = problem("projector-pair.ncp");
    let out = ncpoly(&[p.to_str().unwrap(), "-k", "4", "--stop-on-flat", "--format", "table"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3, "{text}");
    assert!(lines[0].split_whitespace().eq(["k", "status", "bound", "primal", "dual", "gap", "flat", "ranks", "iter", "seconds"]));
    let width = lines[0].len();
    assert!(lines.iter().all(|l| l.len() == width), "{text}");
}

#[test]
fn parallel_orders_match() {
    let p = problem("constrained-state.ncp");
    let seq = json(&ncpoly(&[p.to_str().unwrap(), "-k", "3"]));
    let out = Command::new(env!("CARGO_BIN_EXE_ncpoly"))
        .args([p.to_str().unwrap(), "-k", "3", "--parallel-orders"])
        .env("NCPOLY_THREADS", "3")
        .output()
        .unwrap();
    assert_eq!(bounds(&json(&out)), bounds(&seq));
}

#[test]
fn reads_stdin() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_ncpoly"))
        .args(["-", "-k", "1"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"vars x\nrule x^2 = x\nminimize -x\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!((bounds(&json(&out))[0] + 1.0).abs() < 1e-6);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ncp");
    std::fs::write(&bad, "vars x\nminimize x*y\n").unwrap();
    let out = ncpoly(&[bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2, column 12"));

    let missing = dir.path().join("missing.ncp");
    assert_eq!(ncpoly(&[missing.to_str().unwrap()]).status.code(), Some(2));

    let infeasible = dir.path().join("inf.ncp");
    std::fs::write(&infeasible, "vars x\nminimize x\n>=0: -1 - x^2\n").unwrap();
    assert_eq!(ncpoly(&[infeasible.to_str().unwrap(), "-k", "1"]).status.code(), Some(3));
}

#[test]
fn exports_sdpa_per_order() {
    let dir = tempfile::tempdir().unwrap();
    let p = problem("projector-pair.ncp");
    let single = dir.path().join("one.dat-s");
    assert_eq!(ncpoly(&[p.to_str().unwrap(), "-k", "1", "--export-sdpa", single.to_str().unwrap()]).status.code(), Some(0));
    let text = std::fs::read_to_string(&single).unwrap();
    assert!(ncpoly::sdpa::parse_sdpa(&text).is_ok());

    let base = dir.path().join("h.dat-s");
    assert_eq!(ncpoly(&[p.to_str().unwrap(), "-k", "2", "--export-sdpa", base.to_str().unwrap()]).status.code(), Some(0));
    assert!(dir.path().join("h.k1.dat-s").exists() && dir.path().join("h.k2.dat-s").exists());
}
