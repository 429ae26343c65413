//! End-to-end tests of the `tarnet` binary: exit codes, file outputs,
//! determinism, and the documented subcommand contracts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tarnet"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).to_string()
}

struct TempDir(PathBuf);

impl TempDir {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!(
            "tarnet_cli_{tag}_{}_{}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_nanos()
        ));
        std::fs::create_dir_all(&dir).unwrap();
        TempDir(dir)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }
}

impl Drop for TempDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

#[test]
fn help_exits_zero_everywhere() {
    for args in [
        vec!["--help"],
        vec!["simulate", "--help"],
        vec!["fit", "--help"],
        vec!["forecast", "--help"],
        vec!["transform", "--help"],
        vec!["experiment", "--help"],
        vec!["inspect", "--help"],
    ] {
        let out = run(&args);
        assert_eq!(code(&out), 0, "args: {args:?}");
        assert!(stdout(&out).contains("Usage"), "args: {args:?}");
    }
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = run(&["simulate", "--frobnicate"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("--frobnicate"));
}

#[test]
fn simulate_row_count_and_determinism() {
    let tmp = TempDir::new("sim");
    let out_path = tmp.path("series.csv");
    let args = [
        "simulate", "--n", "4", "--p", "3", "--ranks", "2,2,2", "--t", "100",
        "--seed", "7", "--out",
    ];
    let mut full: Vec<&str> = args.to_vec();
    let out_str = out_path.to_str().unwrap();
    full.push(out_str);

    let out = run(&full);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let text = std::fs::read_to_string(&out_path).unwrap();
    // Header plus T + P data rows.
    assert_eq!(text.lines().count(), 1 + 103);

    let sidecar = tmp.path("series.truth.json");
    let sidecar_text = std::fs::read_to_string(&sidecar).unwrap();
    let v: serde_json::Value = serde_json::from_str(&sidecar_text).unwrap();
    assert_eq!(v["n"], 4);
    assert!(v["spectral"]["mu_min"].as_f64().unwrap() > 0.0);

    // Re-running the identical invocation reproduces both files exactly.
    let out2 = run(&full);
    assert_eq!(code(&out2), 0);
    assert_eq!(std::fs::read_to_string(&out_path).unwrap(), text);
    assert_eq!(std::fs::read_to_string(&sidecar).unwrap(), sidecar_text);
}

#[test]
fn simulate_rejects_infeasible_ranks() {
    let tmp = TempDir::new("simbad");
    let out_path = tmp.path("x.csv");
    let out = run(&[
        "simulate", "--n", "9", "--p", "3", "--ranks", "10,2,2", "--t", "10",
        "--out", out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).to_lowercase().contains("rank"), "{}", stderr(&out));
}

fn simulate_small(tmp: &TempDir, name: &str, n: u32, p: u32, t: u32, seed: u32) -> PathBuf {
    let path = tmp.path(name);
    let out = run(&[
        "simulate", "--n", &n.to_string(), "--p", &p.to_string(), "--ranks", "2,2,1",
        "--t", &t.to_string(), "--seed", &seed.to_string(), "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    path
}

#[test]
fn fit_ols_is_closed_form_deterministic() {
    let tmp = TempDir::new("fitols");
    let data = simulate_small(&tmp, "d.csv", 4, 2, 80, 3);
    let m1 = tmp.path("m1.json");
    let m2 = tmp.path("m2.json");
    for m in [&m1, &m2] {
        let out = run(&[
            "fit", "--method", "ols", "--lags", "2", "--input", data.to_str().unwrap(),
            "--model-out", m.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    }
    assert_eq!(
        std::fs::read_to_string(&m1).unwrap(),
        std::fs::read_to_string(&m2).unwrap()
    );
}

#[test]
fn fit_flag_combinations_are_validated() {
    let tmp = TempDir::new("fitflags");
    let data = simulate_small(&tmp, "d.csv", 3, 1, 30, 5);
    let model = tmp.path("m.json");
    let cases: Vec<Vec<&str>> = vec![
        vec!["fit", "--method", "ols", "--r", "2"],
        vec!["fit", "--method", "lr"],
        vec!["fit", "--method", "ltr"],
        vec!["fit", "--method", "ltr", "--ranks", "2,2,1", "--r", "1"],
        vec!["fit", "--method", "ols", "--activation", "relu"],
        vec!["fit", "--method", "lr", "--r", "2", "--bias"],
    ];
    for mut args in cases {
        args.extend_from_slice(&[
            "--lags", "1", "--input", data.to_str().unwrap(), "--model-out",
            model.to_str().unwrap(),
        ]);
        let out = run(&args);
        assert_eq!(code(&out), 1, "args {args:?} gave {}", stderr(&out));
    }

    // Malformed CSV is a data error (exit 2).
    let bad = tmp.path("bad.csv");
    std::fs::write(&bad, "a,b\n1.0\n").unwrap();
    let out = run(&[
        "fit", "--method", "ols", "--lags", "1", "--input", bad.to_str().unwrap(),
        "--model-out", model.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn inspect_reports_table_parameter_count() {
    let tmp = TempDir::new("tab");
    let data = simulate_small(&tmp, "d.csv", 25, 3, 60, 11);
    let model = tmp.path("m.json");
    let out = run(&[
        "fit", "--method", "ltr", "--ranks", "2,2,2", "--lags", "3", "--max-epochs", "60",
        "--input", data.to_str().unwrap(), "--model-out", model.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("parameters: 114"));

    let out = run(&["inspect", "--model", model.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("kind: ltr"));
    assert!(text.contains("parameters: 114"));
    assert!(text.contains("ranks: 2,2,2"));
}

#[test]
fn tar_identity_predictions_match_ltr() {
    let tmp = TempDir::new("ident");
    let data = simulate_small(&tmp, "d.csv", 4, 2, 120, 17);
    let m_ltr = tmp.path("ltr.json");
    let m_tar = tmp.path("tar.json");
    for (method, extra, model) in [
        ("ltr", None, &m_ltr),
        ("tar", Some(["--activation", "identity"]), &m_tar),
    ] {
        let mut args = vec![
            "fit", "--method", method, "--ranks", "2,2,1", "--lags", "2", "--seed", "9",
            "--max-epochs", "400",
        ];
        if let Some(extra) = extra {
            args.extend_from_slice(&extra);
        }
        args.extend_from_slice(&[
            "--input", data.to_str().unwrap(), "--model-out", model.to_str().unwrap(),
        ]);
        let out = run(&args);
        assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    }

    let dir_a = tmp.path("fa");
    let dir_b = tmp.path("fb");
    for (model, dir) in [(&m_ltr, &dir_a), (&m_tar, &dir_b)] {
        let out = run(&[
            "forecast", "--model", model.to_str().unwrap(), "--input", data.to_str().unwrap(),
            "--train-len", "110", "--test-len", "8", "--out", dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    }
    let pa = std::fs::read_to_string(dir_a.join("predictions.csv")).unwrap();
    let pb = std::fs::read_to_string(dir_b.join("predictions.csv")).unwrap();
    for (la, lb) in pa.lines().skip(1).zip(pb.lines().skip(1)) {
        for (fa, fb) in la.split(',').zip(lb.split(',')) {
            let (va, vb): (f64, f64) = (fa.parse().unwrap(), fb.parse().unwrap());
            assert!(
                (va - vb).abs() <= 1e-8 * va.abs().max(1.0),
                "{va} vs {vb}"
            );
        }
    }
}

#[test]
fn forecast_perfect_model_and_error_paths() {
    let tmp = TempDir::new("fc");
    // A constant series: the zero-weight centered model predicts the
    // training mean, which here is exact.
    let mut csv = String::from("y1\n");
    for _ in 0..40 {
        csv.push_str("3.25\n");
    }
    let data = tmp.path("ar.csv");
    std::fs::write(&data, csv).unwrap();
    let model = tmp.path("m.json");
    let out = run(&[
        "fit", "--method", "ols", "--lags", "1", "--input", data.to_str().unwrap(),
        "--model-out", model.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let dir = tmp.path("out");
    let out = run(&[
        "forecast", "--model", model.to_str().unwrap(), "--input", data.to_str().unwrap(),
        "--train-len", "30", "--test-len", "5", "--per-variable", "y1",
        "--out", dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["l2_norm"].as_f64().unwrap() < 1e-8);
    assert!(metrics["rmse"].as_f64().unwrap() < 1e-8);
    assert!(metrics["mae"].as_f64().unwrap() < 1e-8);
    assert!(dir.join("trace_y1.csv").exists());
    // The trace has one line per step plus the header.
    let trace = std::fs::read_to_string(dir.join("trace_y1.csv")).unwrap();
    assert_eq!(trace.lines().count(), 6);

    // test-len beyond the data is a data error.
    let out = run(&[
        "forecast", "--model", model.to_str().unwrap(), "--input", data.to_str().unwrap(),
        "--train-len", "30", "--test-len", "50", "--out", dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);

    // Dimension mismatch reports N and exits 2.
    let other = tmp.path("two.csv");
    std::fs::write(&other, "a,b\n1.0,2.0\n2.0,3.0\n3.0,4.0\n").unwrap();
    let out = run(&[
        "forecast", "--model", model.to_str().unwrap(), "--input", other.to_str().unwrap(),
        "--train-len", "2", "--test-len", "1", "--out", dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("N = 1"), "{}", stderr(&out));
}

#[test]
fn forecast_metrics_match_emitted_files() {
    let tmp = TempDir::new("fcm");
    let data = simulate_small(&tmp, "d.csv", 3, 2, 60, 23);
    let model = tmp.path("m.json");
    assert_eq!(
        code(&run(&[
            "fit", "--method", "ols", "--lags", "2", "--input", data.to_str().unwrap(),
            "--model-out", model.to_str().unwrap(),
        ])),
        0
    );
    let dir = tmp.path("out");
    let out = run(&[
        "forecast", "--model", model.to_str().unwrap(), "--input", data.to_str().unwrap(),
        "--train-len", "50", "--test-len", "10", "--out", dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);

    // Recompute the metrics from the emitted predictions and the input.
    let preds_text = std::fs::read_to_string(dir.join("predictions.csv")).unwrap();
    let input_text = std::fs::read_to_string(&data).unwrap();
    let parse = |text: &str| -> Vec<Vec<f64>> {
        text.lines()
            .skip(1)
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect()
    };
    let preds = parse(&preds_text);
    let input = parse(&input_text);
    let mut l2 = 0.0;
    let mut sq = 0.0;
    let mut abs = 0.0;
    for (t, row) in preds.iter().enumerate() {
        let truth = &input[50 + t];
        let mut s = 0.0;
        for (a, b) in row.iter().zip(truth) {
            let e = a - b;
            s += e * e;
            abs += e.abs();
        }
        sq += s;
        l2 += s.sqrt();
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap();
    assert!((metrics["l2_norm"].as_f64().unwrap() - l2 / 10.0).abs() < 1e-10);
    assert!((metrics["rmse"].as_f64().unwrap() - (sq / 30.0).sqrt()).abs() < 1e-10);
    assert!((metrics["mae"].as_f64().unwrap() - abs / 30.0).abs() < 1e-10);
}

#[test]
fn transform_applies_codes_and_standardizes() {
    let tmp = TempDir::new("tr");
    let data = tmp.path("raw.csv");
    std::fs::write(
        &data,
        "a,b\n1,5\n2.0,4.0\n4.0,6.0\n8.0,5.0\n16.0,7.0\n32.0,6.0\n",
    )
    .unwrap();
    let out_path = tmp.path("out.csv");
    let out = run(&[
        "transform", "--input", data.to_str().unwrap(), "--codes", "5,1",
        "--standardize", "--out", out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let text = std::fs::read_to_string(&out_path).unwrap();
    // One row lost to the first difference of logs.
    assert_eq!(text.lines().count(), 1 + 5);

    // A constant column cannot be standardized: data error.
    let flat = tmp.path("flat.csv");
    std::fs::write(&flat, "a,b\n1.0,2.0\n1.0,3.0\n1.0,4.0\n").unwrap();
    let out = run(&[
        "transform", "--input", flat.to_str().unwrap(), "--codes", "1,1",
        "--standardize", "--out", tmp.path("x.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    // No work requested.
    let out = run(&[
        "transform", "--input", data.to_str().unwrap(), "--out",
        tmp.path("y.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
}

const TINY_CONFIG: &str = "\
[grid]
ranks = 2,2,2
n = 6
p = 2
ratios = 0.35
replications = 3
master_seed = 42
estimators = ols, lr, ltr

[training]
max_epochs = 300

[output]
dir = reports
id = tiny
";

#[test]
fn experiment_tiny_grid_counts_and_determinism() {
    let tmp = TempDir::new("exp");
    let config = tmp.path("exp.conf");
    std::fs::write(&config, TINY_CONFIG).unwrap();

    let run_once = |threads: &str| -> String {
        let out = bin()
            .current_dir(&tmp.0)
            .env("TARNET_THREADS", threads)
            .args([
                "experiment", "--kind", "sample-complexity", "--config",
                config.to_str().unwrap(),
            ])
            .output()
            .expect("runs");
        assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
        std::fs::read_to_string(tmp.path("reports/tiny_seed42_records.csv")).unwrap()
    };

    let sequential = run_once("1");
    // 3 replications x 3 estimators.
    assert_eq!(sequential.lines().count(), 1 + 9);
    let parallel = run_once("2");
    assert_eq!(sequential, parallel, "parallel run must be byte-identical");

    let aggregate = tmp.path("reports/tiny_seed42_aggregate.json");
    assert!(aggregate.exists());
    assert!(tmp.path("reports/tiny_seed42_figure.csv").exists());
}

#[test]
fn experiment_missing_or_bad_config_is_usage_error() {
    let tmp = TempDir::new("expbad");
    let out = run_in(&tmp.0, &[
        "experiment", "--kind", "sample-complexity", "--config", "nope.conf",
    ]);
    assert_eq!(code(&out), 1);

    let config = tmp.path("bad.conf");
    std::fs::write(&config, "[grid]\nreplciations = 3\n").unwrap();
    let out = run_in(&tmp.0, &[
        "experiment", "--kind", "sample-complexity", "--config", config.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("replciations"));
}

#[test]
fn experiment_macro_synthetic_smoke() {
    let tmp = TempDir::new("macro");
    let config = tmp.path("macro.conf");
    std::fs::write(
        &config,
        "[grid]\nlags = 2\nranks = 2,2,2\nhidden = 2\ntrain_len = 30\ntest_len = 8\n\
         master_seed = 7\nsynthetic_n = 6\nsynthetic_rows = 40\n\n[training]\nmax_epochs = 150\n\n\
         [output]\ndir = out\nid = smoke\ntrace_variable = y3\n",
    )
    .unwrap();
    let out = run_in(&tmp.0, &[
        "experiment", "--kind", "macro", "--config", config.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let records = std::fs::read_to_string(tmp.path("out/smoke_seed7_records.csv")).unwrap();
    assert_eq!(records.lines().count(), 1 + 5, "five models");
    for model in ["mlp0", "mlp1", "ltar", "tar", "tar2"] {
        assert!(tmp.path(&format!("out/smoke_seed7_pred_{model}.csv")).exists());
        let trace = tmp.path(&format!("out/smoke_seed7_trace_{model}_y3.csv"));
        let text = std::fs::read_to_string(trace).unwrap();
        assert_eq!(text.lines().count(), 1 + 8, "one line per test step");
    }
}
