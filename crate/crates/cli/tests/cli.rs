use std::path::Path;
use std::process::{Command, Output};

fn pglmm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pglmm")).current_dir(dir).arg("-q").args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = pglmm(dir, args);
    assert!(out.status.success(), "pglmm {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

const QUICK: [&str; 6] = ["--nmc-report", "300", "--m-star", "300", "--lambda0", "0.01"];

fn simulated(dir: &Path) {
    ok(dir, &["simulate", "--n", "120", "--p", "2", "--k", "4", "--seed", "3", "--out", "sim"]);
}

#[test]
fn missing_response_column_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    let out = pglmm(dir.path(), &["fit", "--data", "sim/data.csv", "--response", "outcome"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing column 'outcome'"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.json"), r#"{"famly": "gaussian"}"#).unwrap();
    let out = pglmm(dir.path(), &["--config", "run.json", "simulate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("famly"));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    std::fs::write(
        dir.path().join("run.json"),
        r#"{"data": "sim/data.csv", "seed": 5, "lambda1": 0.5, "nmc_report": 300, "m_star": 300, "out": "from_config"}"#,
    )
    .unwrap();
    ok(dir.path(), &["--config", "run.json", "--seed", "9", "fit", "--lambda1", "0.01"]);
    let text = std::fs::read_to_string(dir.path().join("from_config/fit_report.json")).unwrap();
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(report["seed"], 9);
    assert_eq!(report["lambda1"], 0.01);
    assert_eq!(report["lambda0"], 0.0);
    assert!(dir.path().join("from_config/timing.json").exists());
}

#[test]
fn predict_requires_the_model_covariates() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    ok(dir.path(), &[&["fit", "--data", "sim/data.csv", "--out", "fit"][..], &QUICK[..]].concat());
    std::fs::write(dir.path().join("new.csv"), "X1\n0.5\n-1.0\n").unwrap();
    let out = pglmm(dir.path(), &["predict", "--report", "fit/fit_report.json", "--data", "new.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing column 'X2'"));

    ok(dir.path(), &["predict", "--report", "fit/fit_report.json", "--data", "sim/data.csv", "--out", "pred"]);
    let pred = std::fs::read_to_string(dir.path().join("pred/predictions.csv")).unwrap();
    assert_eq!(pred.lines().count(), 121);
    for line in pred.lines().skip(1) {
        let v: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
}

#[test]
fn random_intercept_diagnostics_have_one_series_per_group() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    ok(dir.path(), &[&["fit", "--data", "sim/data.csv", "--random", "none", "--out", "fit"][..], &QUICK[..]].concat());
    ok(dir.path(), &["diagnose", "--out", "fit"]);
    let mut reader = csv::Reader::from_path(dir.path().join("fit/diagnostics.csv")).unwrap();
    let mut seen = std::collections::BTreeSet::new();
    for rec in reader.records() {
        let rec = rec.unwrap();
        seen.insert((rec[0].to_string(), rec[1].to_string(), rec[2].to_string()));
    }
    for kind in ["sample_path", "autocorr", "cumsum", "histogram", "histogram_breaks"] {
        let n = seen.iter().filter(|(s, _, v)| s == kind && v == "(Intercept)").count();
        assert_eq!(n, 4, "{kind}");
    }
    assert_eq!(seen.len(), 20);

    let out = pglmm(dir.path(), &["diagnose", "--out", "fit", "--groups", "nope"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn select_reuses_a_saved_minimal_penalty_posterior() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    let args = ["select", "--data", "sim/data.csv", "--nlambda", "2", "--nmc-report", "300", "--m-star", "300"];
    ok(dir.path(), &[&args[..], &["--bicq-posterior", "minpen.pglmpost", "--out", "a"][..]].concat());
    assert!(dir.path().join("minpen.pglmpost").exists());
    let out = Command::new(env!("CARGO_BIN_EXE_pglmm"))
        .current_dir(dir.path())
        .args(&args)
        .args(["--bicq-posterior", "minpen.pglmpost", "--out", "b"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("reusing BICq posterior from"));
    let a = std::fs::read(dir.path().join("a/fit_report.json")).unwrap();
    let b = std::fs::read(dir.path().join("b/fit_report.json")).unwrap();
    assert_eq!(a, b);
}
