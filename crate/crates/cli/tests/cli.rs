//! Runs the `relaxbc` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn relaxbc(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relaxbc")).args(args).arg("--out").arg(out).args(["--grid", "9,17"]).output().expect("binary runs")
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn c3_file(dir: &Path, s: [[f64; 2]; 2], b: [[f64; 3]; 2]) -> String {
    let doc = json!({
        "n": 3,
        "r": 2,
        "A01": [[1.0]],
        "A02": [[1.0, 0.0], [0.0, 1.0]],
        "A11": [[1.0]],
        "A12": [[1.0, 0.0]],
        "A22": [[2.0, 0.0], [0.0, 0.0]],
        "S": s,
        "B": b,
        "b": {"kind": "sinusoid", "coeffs": [[0.0, 0.0, 0.0, 0.0], [0.0, 1.0, 1.0, 0.0]]},
    });
    let path = dir.join("system.json");
    std::fs::write(&path, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    path.display().to_string()
}

const S_NEG: [[f64; 2]; 2] = [[-1.0, 0.0], [0.0, -1.0]];
const B_C3: [[f64; 3]; 2] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];

#[test]
fn gkc_passes_on_c3() {
    let tmp = TempDir::new().unwrap();
    let o = relaxbc(&["gkc", "--demo", "c3"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(tmp.path());
    assert_eq!(r["status"], "pass");
    assert!(r["stages"]["gkc"]["minRatio"].as_f64().unwrap() > 0.5);
    assert!(tmp.path().join("gkc.csv").exists());
}

#[test]
fn reduce_reports_c3_reduced_condition() {
    let tmp = TempDir::new().unwrap();
    let o = relaxbc(&["reduce", "--demo", "c3"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    let red = &report(tmp.path())["stages"]["reduce"];
    let bp: Vec<f64> = red["Bp"][0].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let sign = bp[0].signum();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    assert!((sign * bp[0] - h).abs() < 1e-12 && (sign * bp[1] - h).abs() < 1e-12, "{bp:?}");
    assert!((red["reducedOperator"][0][0].as_f64().unwrap().abs() - h).abs() < 1e-12);
}

#[test]
fn file_input_matches_demo() {
    let tmp = TempDir::new().unwrap();
    let path = c3_file(tmp.path(), S_NEG, B_C3);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(relaxbc(&["reduce", "--input", &path], &a).status.code(), Some(0));
    assert_eq!(relaxbc(&["reduce", "--demo", "c3"], &b).status.code(), Some(0));
    assert_eq!(report(&a)["stages"], report(&b)["stages"]);
}

#[test]
fn flipped_source_fails_validation() {
    let tmp = TempDir::new().unwrap();
    let path = c3_file(tmp.path(), [[1.0, 0.0], [0.0, 1.0]], B_C3);
    let o = relaxbc(&["validate", "--input", &path], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("symNegDef(S)"));
    let r = report(tmp.path());
    assert_eq!(r["failure"]["stage"], "validate");
    assert!(r["failure"]["message"].as_str().unwrap().contains("symNegDef(S)"));
}

#[test]
fn converge_is_gated_by_earlier_stages() {
    let tmp = TempDir::new().unwrap();
    let path = c3_file(tmp.path(), S_NEG, [[0.0, 0.0, 1.0], [0.0, 1.0, 0.0]]);
    let o = relaxbc(&["converge", "--input", &path, "--eps", "0.05", "--T", "0.2"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    let r = report(tmp.path());
    // this boundary already fails the algebraic boundary checks
    assert_eq!(r["failure"]["stage"], "validate");
    assert!(r["failure"]["message"].as_str().unwrap().contains("kreissDet(B*RAU)"));
    assert!(r["stages"].get("converge").is_none());
    assert!(r["stages"].get("reduce").is_none());
}

#[test]
fn malformed_json_reports_location() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("bad.json");
    std::fs::write(&path, "{\n  \"n\": 3,\n  \"r\": oops\n}\n").unwrap();
    let o = relaxbc(&["validate", "--input", path.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.json:3:"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn ragged_matrix_is_a_parse_error() {
    let tmp = TempDir::new().unwrap();
    let path = c3_file(tmp.path(), S_NEG, B_C3);
    let text = std::fs::read_to_string(&path).unwrap().replacen("[\n      2.0,\n      0.0\n    ]", "[2.0]", 1);
    std::fs::write(&path, text).unwrap();
    let o = relaxbc(&["validate", "--input", &path], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("A22"));
}

#[test]
fn bad_knobs_exit_with_usage_error() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(relaxbc(&["gkc", "--demo", "c3", "--cfl", "2"], tmp.path()).status.code(), Some(2));
    assert_eq!(relaxbc(&["gkc", "--demo", "c3", "--eps", "0.1,-1"], tmp.path()).status.code(), Some(2));
    assert_eq!(relaxbc(&["frobnicate", "--demo", "c3"], tmp.path()).status.code(), Some(2));
}

#[test]
fn nonlinear_demo_stays_close_to_linear_corner() {
    let tmp = TempDir::new().unwrap();
    let o = relaxbc(&["nonlinear", "--demo", "nc3"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let nl = &report(tmp.path())["stages"]["nonlinear"];
    assert!(nl["linearDeviation"].as_f64().unwrap() < 2e-6);
    assert_eq!(nl["manifoldEscape"], false);
    assert!(tmp.path().join("nonlinear_layer.csv").exists());
}

#[test]
fn converge_writes_series() {
    let tmp = TempDir::new().unwrap();
    let o = relaxbc(&["converge", "--demo", "c3", "--eps", "0.04,0.02", "--T", "0.5"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let conv = &report(tmp.path())["stages"]["converge"];
    assert_eq!(conv["errors"].as_array().unwrap().len(), 2);
    let csv = std::fs::read_to_string(tmp.path().join("convergence.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn output_is_byte_identical_across_runs() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        assert_eq!(relaxbc(&["layer", "--demo", "c3"], dir).status.code(), Some(0));
    }
    for name in ["report.json", "gkc.csv", "layer.csv"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name} differs");
    }
}
