//! Integration tests driving the `jscatter` binary end to end on small
//! configurations: artifact layout, stored-data reuse, corrupted-data
//! rejection, exit codes, and single-worker determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const UNPERTURBED: &str = r#"{
  "left":  { "period": 1, "a": [0.5], "b": [0.0] },
  "right": { "period": 1, "a": [0.5], "b": [0.0] }
}"#;

const RAISED_SITE: &str = r#"{
  "left":  { "period": 1, "a": [0.5], "b": [0.0] },
  "right": { "period": 1, "a": [0.5], "b": [0.0] },
  "overrides": [ { "n": 0, "a": 0.5, "b": 1.0 } ]
}"#;

const PURE_STEP: &str = r#"{
  "left":  { "period": 1, "a": [0.5], "b": [1.0] },
  "right": { "period": 1, "a": [0.5], "b": [0.0] }
}"#;

fn jscatter(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jscatter"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_spec(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

fn stderr_text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Column `col` of the row with first field `n`, parsed as f64.
fn csv_cell(text: &str, n: i64, col: usize) -> f64 {
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert!(col < header.len());
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields[0].parse::<i64>() == Ok(n) {
            return fields[col].parse().unwrap();
        }
    }
    panic!("no row with n = {n}");
}

#[test]
fn roundtrip_unperturbed_writes_all_artifacts_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    write_spec(dir.path(), "spec.json", UNPERTURBED);
    let out = jscatter(
        dir.path(),
        &[
            "roundtrip",
            "--spec",
            "spec.json",
            "--quad-nodes",
            "64",
            "--grid",
            "60",
            "--glm-window",
            "30",
            "--report-range",
            "-6,6",
            "--out",
            "run",
        ],
    );
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_text(&out));

    for name in [
        "bands.json",
        "scattering.json",
        "band_plus_0.csv",
        "band_minus_0.csv",
        "kernels.csv",
        "reconstruction.csv",
        "summary.json",
    ] {
        assert!(dir.path().join("run").join(name).exists(), "missing {name}");
    }

    let summary = read_json(&dir.path().join("run/summary.json"));
    assert_eq!(summary["command"], "roundtrip");
    assert_eq!(summary["exit"], 0);
    let checks = summary["checks"].as_array().unwrap();
    assert!(!checks.is_empty());
    assert!(checks.iter().all(|c| c["pass"] == true));
    assert!(checks.iter().any(|c| c["name"] == "roundtrip_error"));
    assert!(checks.iter().any(|c| c["name"] == "coincidence_error"));

    let rec = fs::read_to_string(dir.path().join("run/reconstruction.csv")).unwrap();
    assert_eq!(rec.lines().count(), 1 + 13);
    // Combined coefficients (columns 5, 6) must reproduce the free operator.
    for n in [-6, 0, 6] {
        assert!((csv_cell(&rec, n, 5) - 0.5).abs() < 1e-12);
        assert!(csv_cell(&rec, n, 6).abs() < 1e-12);
    }
}

#[test]
fn direct_then_inverse_reuses_stored_data() {
    let dir = tempfile::tempdir().unwrap();
    write_spec(dir.path(), "spec.json", RAISED_SITE);
    let out = jscatter(
        dir.path(),
        &[
            "direct",
            "--spec",
            "spec.json",
            "--quad-nodes",
            "64",
            "--out",
            "d",
        ],
    );
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_text(&out));

    let data = read_json(&dir.path().join("d/scattering.json"));
    let eigen = data["eigenvalues"].as_array().unwrap();
    assert_eq!(eigen.len(), 1);
    assert!((eigen[0].as_f64().unwrap() - 2.0_f64.sqrt()).abs() < 1e-9);

    let out = jscatter(
        dir.path(),
        &[
            "inverse",
            "--spec",
            "spec.json",
            "--scattering",
            "d/scattering.json",
            "--quad-nodes",
            "64",
            "--glm-window",
            "30",
            "--report-range",
            "-6,6",
            "--tol",
            "1e-8",
            "--out",
            "i",
        ],
    );
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_text(&out));

    let rec = fs::read_to_string(dir.path().join("i/reconstruction.csv")).unwrap();
    assert!((csv_cell(&rec, 0, 5) - 0.5).abs() < 1e-6);
    assert!((csv_cell(&rec, 0, 6) - 1.0).abs() < 1e-6);
    assert!(csv_cell(&rec, 3, 6).abs() < 1e-6);
    assert!(dir.path().join("i/kernels.csv").exists());
}

#[test]
fn validate_rejects_scaled_reflection() {
    let dir = tempfile::tempdir().unwrap();
    write_spec(dir.path(), "spec.json", RAISED_SITE);
    let out = jscatter(
        dir.path(),
        &[
            "direct",
            "--spec",
            "spec.json",
            "--quad-nodes",
            "64",
            "--out",
            "d",
        ],
    );
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_text(&out));

    let mut data = read_json(&dir.path().join("d/scattering.json"));
    for grid in data["grids"]["plus"].as_array_mut().unwrap() {
        for r in grid["r"].as_array_mut().unwrap() {
            for part in r.as_array_mut().unwrap() {
                let scaled = part.as_f64().unwrap() * 1.1;
                *part = Value::from(scaled);
            }
        }
    }
    fs::write(
        dir.path().join("corrupted.json"),
        serde_json::to_string(&data).unwrap(),
    )
    .unwrap();

    let out = jscatter(
        dir.path(),
        &[
            "validate",
            "--spec",
            "spec.json",
            "--scattering",
            "corrupted.json",
            "--quad-nodes",
            "64",
            "--out",
            "v",
        ],
    );
    assert_eq!(exit_code(&out), 1, "stderr: {}", stderr_text(&out));
    assert!(stderr_text(&out).contains("sigma2_unitarity"));

    let summary = read_json(&dir.path().join("v/summary.json"));
    assert_eq!(summary["exit"], 1);
    let unitarity = summary["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "sigma2_unitarity")
        .unwrap();
    assert_eq!(unitarity["pass"], false);
}

#[test]
fn stored_data_with_wrong_layout_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_spec(dir.path(), "spec.json", UNPERTURBED);
    let out = jscatter(
        dir.path(),
        &[
            "direct",
            "--spec",
            "spec.json",
            "--quad-nodes",
            "64",
            "--out",
            "d",
        ],
    );
    assert_eq!(exit_code(&out), 0);

    let out = jscatter(
        dir.path(),
        &[
            "validate",
            "--spec",
            "spec.json",
            "--scattering",
            "d/scattering.json",
            "--quad-nodes",
            "48",
            "--out",
            "v",
        ],
    );
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_text(&out).contains("scattering data rejected"));
}

#[test]
fn invalid_inputs_exit_with_usage_status() {
    let dir = tempfile::tempdir().unwrap();

    write_spec(dir.path(), "garbage.json", "{ not json");
    let out = jscatter(dir.path(), &["bands", "--spec", "garbage.json"]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_text(&out).contains("cannot parse spec"));

    write_spec(
        dir.path(),
        "bad_coeff.json",
        r#"{"left":{"period":1,"a":[0.0],"b":[0.0]},"right":{"period":1,"a":[0.5],"b":[0.0]}}"#,
    );
    let out = jscatter(dir.path(), &["bands", "--spec", "bad_coeff.json"]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_text(&out).contains("invalid spec"));

    let out = jscatter(dir.path(), &["bands", "--spec", "missing.json"]);
    assert_eq!(exit_code(&out), 2);

    write_spec(dir.path(), "spec.json", UNPERTURBED);
    let out = jscatter(
        dir.path(),
        &[
            "roundtrip",
            "--spec",
            "spec.json",
            "--report-range",
            "-80,80",
        ],
    );
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_text(&out).contains("exceeds the supported kernel-row range"));
}

#[test]
fn bands_reports_spectra_and_partition() {
    let dir = tempfile::tempdir().unwrap();
    write_spec(dir.path(), "spec.json", PURE_STEP);
    let out = jscatter(dir.path(), &["bands", "--spec", "spec.json", "--out", "b"]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_text(&out));

    let bands = read_json(&dir.path().join("b/bands.json"));
    let plus = bands["plus"]["bands"].as_array().unwrap();
    let minus = bands["minus"]["bands"].as_array().unwrap();
    assert_eq!(plus.len(), 1);
    assert_eq!(minus.len(), 1);
    assert!((plus[0][0].as_f64().unwrap() + 1.0).abs() < 1e-12);
    assert!((plus[0][1].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((minus[0][0].as_f64().unwrap() - 0.0).abs() < 1e-12);
    assert!((minus[0][1].as_f64().unwrap() - 2.0).abs() < 1e-12);
    let sigma2 = bands["partition"]["sigma2"].as_array().unwrap();
    assert_eq!(sigma2.len(), 1);
    assert!((sigma2[0][0].as_f64().unwrap() - 0.0).abs() < 1e-12);
    assert!((sigma2[0][1].as_f64().unwrap() - 1.0).abs() < 1e-12);

    let summary = read_json(&dir.path().join("b/summary.json"));
    assert_eq!(summary["command"], "bands");
    assert_eq!(summary["exit"], 0);
}

#[test]
fn single_worker_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    write_spec(dir.path(), "spec.json", PURE_STEP);
    let args = |out: &'static str| {
        vec![
            "roundtrip",
            "--spec",
            "spec.json",
            "--quad-nodes",
            "48",
            "--grid",
            "40",
            "--glm-window",
            "24",
            "--report-range",
            "-5,5",
            "--tol",
            "1e-5",
            "--workers",
            "1",
            "--out",
            out,
        ]
    };
    let out = jscatter(dir.path(), &args("a"));
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_text(&out));
    let out = jscatter(dir.path(), &args("b"));
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_text(&out));

    for name in [
        "scattering.json",
        "reconstruction.csv",
        "kernels.csv",
        "summary.json",
    ] {
        let a = fs::read(dir.path().join("a").join(name)).unwrap();
        let b = fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}
