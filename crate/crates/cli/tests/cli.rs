use std::path::PathBuf;
use std::process::Command;

use ctc_cli::{run_cli, EXIT_ERROR, EXIT_NOT_CONVERGED, EXIT_OK};

fn corpus(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../experiments")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn cli(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut argv = vec!["ctc"];
    argv.extend_from_slice(args);
    let code = run_cli(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn read_json(path: &std::path::Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn brun_run_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.json");
    let (code, _, err) = cli(&["run", "-f", &corpus("brun_ch.ctc"), "--json", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    let v = read_json(&path);
    let success = v["metrics"]["success_probability"].as_f64().unwrap();
    assert!((success - 1.0).abs() < 1e-9);
    for key in ["experiment", "converged", "iterations", "residual", "entropy_bits", "metrics", "rho_out"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn swap_scan_is_multiple() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scan.json");
    let (code, out, _) = cli(&["scan", "-f", &corpus("swap.ctc"), "--samples", "16", "--json", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("\"multiple\""));
    assert_eq!(read_json(&path)["classification"], "multiple");
}

#[test]
fn oracle_check_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.json");
    let (code, out, _) = cli(&[
        "run",
        "-f",
        &corpus("brun_ch.ctc"),
        "--oracle-check",
        "10",
        "--json",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("oracle depth=10"));
    assert!(read_json(&path)["metrics"]["oracle_distance"].as_f64().unwrap() < 1e-9);
}

#[test]
fn csv_trace_has_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let (code, _, _) = cli(&["run", "-f", &corpus("brun_ch.ctc"), "--csv-trace", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), "step,successive_distance,residual,entropy_bits");
    assert!(text.lines().count() > 10);
}

#[test]
fn every_corpus_file_runs() {
    for entry in std::fs::read_dir(corpus("")).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "ctc") {
            let (code, _, err) = cli(&["run", "-f", path.to_str().unwrap()]);
            assert_eq!(code, EXIT_OK, "{}: {err}", path.display());
        }
    }
}

#[test]
fn sweep_json_keeps_grid_order() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.json");
    let (code, _, _) = cli(&["run", "-f", &corpus("swap_envelope.ctc"), "--json", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    let v = read_json(&path);
    let values: Vec<f64> = v["points"].as_array().unwrap().iter().map(|p| p["sweep_value"].as_f64().unwrap()).collect();
    assert_eq!(values, vec![100.0, 500.0, 1000.0]);
}

#[test]
fn non_convergence_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("short.ctc");
    std::fs::write(&file, "experiment short\ngate CH(control=lower)\nbranch 1: ket \"-\"\nsolver { max_iter=3 }\n").unwrap();
    let (code, _, err) = cli(&["run", "-f", file.to_str().unwrap()]);
    assert_eq!(code, EXIT_NOT_CONVERGED);
    assert!(err.contains("did not converge"));
}

#[test]
fn diagnostics_go_to_stderr_with_positions() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.ctc");
    std::fs::write(&file, "experiment bad\ngate FOO\nbranch 1: ket \"0\"\n").unwrap();
    let (code, out, err) = cli(&["run", "-f", file.to_str().unwrap()]);
    assert_eq!(code, EXIT_ERROR);
    assert!(out.is_empty());
    assert!(err.contains(":2:6: error: unknown gate `FOO`"), "{err}");
}

#[test]
fn solve_and_sweep_subcommands() {
    let (code, out, _) = cli(&["solve", "--gate", "CH", "--input", "-", "--damping", "1"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.starts_with("solve: converged=true"));
    let (code, out, _) = cli(&["sweep", "--gate", "SWAP", "--input", "0", "--axis", "p", "--grid", "0.1,0.5"]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(out.lines().filter(|l| l.starts_with("p=")).count(), 2);
    let (code, _, _) = cli(&["solve", "--gate", "nope"]);
    assert_eq!(code, EXIT_ERROR);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_ctc");
    let ok = Command::new(bin).args(["run", "-f", &corpus("brun_ch.ctc")]).output().unwrap();
    assert_eq!(ok.status.code(), Some(EXIT_OK));
    let bad = Command::new(bin).args(["run", "-f", &corpus("invalid/bad_weights.ctc")]).output().unwrap();
    assert_eq!(bad.status.code(), Some(EXIT_ERROR));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("bad_weights.ctc:3:1: error"));
}
