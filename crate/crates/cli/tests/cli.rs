use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn d2g(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_d2g"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_vec_pretty(v).unwrap()).unwrap();
    p
}

fn run_ok(args: &[&str]) {
    let o = d2g(args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn regression_config() -> Value {
    json!({
        "dataset": {"kind": "snelson-like", "n": 40, "gap": true, "seed": 5},
        "model": {"hidden": [6], "activation": "sigmoid"},
        "loss": {"kind": "squared", "sigma2": 0.0625},
        "optimizer": {"kind": "adam", "alpha": 0.01},
        "epochs": 300,
        "delta": 0.5,
        "predict": {"grid": [{"lo": -1.0, "hi": 7.0, "points": 200}]}
    })
}

#[test]
fn regression_pipeline_writes_predictive_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &regression_config());
    let (c, out) = (cfg.to_str().unwrap(), dir.path().join("run"));
    let out = out.to_str().unwrap();
    for cmd in ["train", "posterior", "predict", "evidence"] {
        run_ok(&[cmd, "--config", c, "--out", out]);
    }
    let (header, rows) = csv_rows(&Path::new(out).join("predictive.csv"));
    assert_eq!(header, ["x", "mean", "aleatoric", "epistemic", "total"]);
    assert_eq!(rows.len(), 200);
    for r in &rows {
        assert_eq!(r[2], 0.0625);
        assert!(r[3] > 0.0);
        assert!((r[4] - r[2] - r[3]).abs() < 1e-12);
    }
    let ev: Value = serde_json::from_slice(&std::fs::read(Path::new(out).join("evidence.json")).unwrap()).unwrap();
    assert!(ev["log_ml"].as_f64().unwrap().is_finite());

    // A single MC draw is the mean network: no spread.
    run_ok(&["predict", "--config", c, "--out", out, "--method", "mc", "--samples", "1"]);
    let (_, rows) = csv_rows(&Path::new(out).join("predictive.csv"));
    assert!(rows.iter().all(|r| r[3] == 0.0));
}

#[test]
fn stale_artifacts_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &regression_config());
    let (c, out) = (cfg.to_str().unwrap(), dir.path().to_str().unwrap());
    run_ok(&["train", "--config", c, "--out", out]);
    run_ok(&["posterior", "--config", c, "--out", out]);
    let o = d2g(&["predict", "--config", c, "--out", out, "--seed", "7"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("d2g train"));

    // Changing only the posterior section invalidates the posterior, not the weights.
    let mut v = regression_config();
    v["posterior"] = json!({"curvature": "diagonal"});
    let cfg2 = write_config(dir.path(), "c2.json", &v);
    let o = d2g(&["predict", "--config", cfg2.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("d2g posterior"));
    run_ok(&["posterior", "--config", cfg2.to_str().unwrap(), "--out", out]);
    run_ok(&["predict", "--config", cfg2.to_str().unwrap(), "--out", out]);
}

#[test]
fn exit_codes_separate_usage_from_runtime() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(d2g(&["train", "--config", "/no/such/config.json"]).status.code(), Some(1));
    assert_eq!(d2g(&["train"]).status.code(), Some(1));
    assert_eq!(d2g(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(d2g(&["--help"]).status.code(), Some(0));

    let mut v = regression_config();
    v["learning_rate"] = json!(0.1);
    let cfg = write_config(dir.path(), "bad.json", &v);
    let o = d2g(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));

    let mut v = regression_config();
    v["dataset"] = json!({"kind": "snelson-file", "path": "missing.txt"});
    let cfg = write_config(dir.path(), "missing.json", &v);
    let o = d2g(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.txt"));
}

#[test]
fn kernel_is_grouped_by_class_and_symmetric() {
    let dir = tempfile::tempdir().unwrap();
    let v = json!({
        "dataset": {"kind": "blobs", "n": 30, "classes": 3, "seed": 2},
        "model": {"hidden": [5], "activation": "tanh"},
        "loss": {"kind": "softmax", "num_classes": 3},
        "optimizer": {"kind": "adam", "alpha": 0.02},
        "epochs": 200,
        "delta": 1.0,
        "kernel": {"summarized": true}
    });
    let cfg = write_config(dir.path(), "k.json", &v);
    let (c, out) = (cfg.to_str().unwrap(), dir.path().to_str().unwrap());
    run_ok(&["train", "--config", c, "--out", out]);
    run_ok(&["kernel", "--config", c, "--out", out, "--jobs", "2"]);
    let (header, rows) = csv_rows(&dir.path().join("kernel.csv"));
    assert_eq!(header.len(), 30);
    assert_eq!(rows.len(), 30);
    let labels: Vec<usize> = header.iter().map(|h| h.parse().unwrap()).collect();
    assert!(labels.windows(2).all(|w| w[0] <= w[1]), "{labels:?}");
    for i in 0..30 {
        for j in 0..30 {
            assert_eq!(rows[i][j], rows[j][i]);
        }
    }
}

#[test]
fn sweep_is_independent_of_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let v = json!({
        "dataset": {"kind": "synthetic", "n": 30},
        "model": {"hidden": [4], "activation": "tanh"},
        "loss": {"kind": "squared", "sigma2": 0.01},
        "optimizer": {"kind": "adam", "alpha": 0.01},
        "epochs": 100,
        "delta": 1.0,
        "sweep": {"param": "delta", "grid": [0.1, 1.0, 10.0], "repeats": 2,
                  "test": {"kind": "synthetic", "n": 50}}
    });
    let cfg = write_config(dir.path(), "s.json", &v);
    let c = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_ok(&["sweep", "--config", c, "--out", a.to_str().unwrap(), "--jobs", "1"]);
    run_ok(&["sweep", "--config", c, "--out", b.to_str().unwrap(), "--jobs", "3"]);
    for f in ["sweep_cells.csv", "sweep_summary.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
    let text = std::fs::read_to_string(a.join("sweep_cells.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "param_name,param_value,repeat,seed,train_mse,test_mse,log_ml,error"
    );
    assert_eq!(lines.count(), 6);
    let summary = std::fs::read_to_string(a.join("sweep_summary.csv")).unwrap();
    assert!(summary.starts_with("param_name,param_value,completed,failed,train_mse_mean,train_mse_stderr"));
}

#[test]
fn classification_predicts_on_a_2d_grid() {
    let dir = tempfile::tempdir().unwrap();
    let v = json!({
        "dataset": {"kind": "two-moons", "n": 40, "seed": 1},
        "model": {"hidden": [6], "activation": "tanh"},
        "loss": {"kind": "logistic"},
        "optimizer": {"kind": "adam", "alpha": 0.03},
        "epochs": 300,
        "delta": 0.26,
        "predict": {"grid": [{"lo": -2.0, "hi": 3.0, "points": 4}, {"lo": -1.5, "hi": 2.0, "points": 5}]}
    });
    let cfg = write_config(dir.path(), "m.json", &v);
    let (c, out) = (cfg.to_str().unwrap(), dir.path().to_str().unwrap());
    for cmd in ["train", "posterior", "predict"] {
        run_ok(&[cmd, "--config", c, "--out", out]);
    }
    let (header, rows) = csv_rows(&dir.path().join("predictive.csv"));
    assert_eq!(header, ["x0", "x1", "mean", "aleatoric", "epistemic", "total"]);
    assert_eq!(rows.len(), 20);
    for r in &rows {
        let p = r[2];
        assert!(p > 0.0 && p < 1.0);
        assert!((r[3] - p * (1.0 - p)).abs() < 1e-12);
    }
}

#[test]
fn vi_posterior_comes_from_vogn_state() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = regression_config();
    v["optimizer"] = json!({"kind": "vogn", "beta": 0.1, "num_samples": 2});
    v["epochs"] = json!(50);
    v["posterior"] = json!({"method": "vi"});
    let cfg = write_config(dir.path(), "v.json", &v);
    let (c, out) = (cfg.to_str().unwrap(), dir.path().to_str().unwrap());
    for cmd in ["train", "posterior", "predict"] {
        run_ok(&[cmd, "--config", c, "--out", out]);
    }
    let meta: Value = serde_json::from_slice(&std::fs::read(dir.path().join("posterior.json")).unwrap()).unwrap();
    assert_eq!(meta["kind"], "vi");

    // VI needs VOGN state in the weights file.
    let mut v = regression_config();
    v["posterior"] = json!({"method": "vi"});
    let cfg = write_config(dir.path(), "bad.json", &v);
    assert_eq!(d2g(&["train", "--config", cfg.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn quick_verify_emits_passing_reports() {
    let o = d2g(&["verify", "--quick", "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let reports: Vec<Value> = serde_json::from_slice(&o.stdout).unwrap();
    assert!(!reports.is_empty());
    assert!(reports.iter().all(|r| r["pass"] == true));
}

#[test]
fn training_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &regression_config());
    let c = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_ok(&["train", "--config", c, "--out", a.to_str().unwrap()]);
    run_ok(&["train", "--config", c, "--out", b.to_str().unwrap()]);
    assert_eq!(std::fs::read(a.join("params.json")).unwrap(), std::fs::read(b.join("params.json")).unwrap());
}

#[test]
fn linear_model_mc_mean_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = regression_config();
    v["model"] = json!({"hidden": [], "activation": "tanh"});
    let cfg = write_config(dir.path(), "lin.json", &v);
    let (c, out) = (cfg.to_str().unwrap(), dir.path().to_str().unwrap());
    for cmd in ["train", "posterior", "predict"] {
        run_ok(&[cmd, "--config", c, "--out", out]);
    }
    let (_, exact) = csv_rows(&dir.path().join("predictive.csv"));
    run_ok(&["predict", "--config", c, "--out", out, "--method", "mc", "--samples", "400"]);
    let (_, mc) = csv_rows(&dir.path().join("predictive.csv"));
    for (e, m) in exact.iter().zip(&mc) {
        assert!((e[1] - m[1]).abs() < 1e-8, "{} vs {}", e[1], m[1]);
    }
}

#[test]
fn single_example_kernel_is_one_positive_entry() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &regression_config());
    let (c, out) = (cfg.to_str().unwrap(), dir.path().to_str().unwrap());
    run_ok(&["train", "--config", c, "--out", out]);
    run_ok(&["kernel", "--config", c, "--out", out, "--subsample", "1"]);
    let (header, rows) = csv_rows(&dir.path().join("kernel.csv"));
    assert_eq!(header.len(), 1);
    assert_eq!(rows.len(), 1);
    assert!(rows[0][0] > 0.0);
}

#[test]
fn sweep_aggregates_match_cells() {
    let dir = tempfile::tempdir().unwrap();
    let v = json!({
        "dataset": {"kind": "synthetic", "n": 30},
        "model": {"hidden": [4], "activation": "tanh"},
        "loss": {"kind": "squared", "sigma2": 0.01},
        "optimizer": {"kind": "adam", "alpha": 0.01},
        "epochs": 60,
        "delta": 1.0,
        "sweep": {"param": "sigma", "grid": [0.1], "repeats": 3, "test_fraction": 0.3}
    });
    let cfg = write_config(dir.path(), "s.json", &v);
    run_ok(&["sweep", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    let mut cells = csv::Reader::from_path(dir.path().join("sweep_cells.csv")).unwrap();
    let test_mse: Vec<f64> = cells.records().map(|r| r.unwrap()[5].parse().unwrap()).collect();
    assert_eq!(test_mse.len(), 3);
    let mut summary = csv::Reader::from_path(dir.path().join("sweep_summary.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = summary.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 1);
    let mean = test_mse.iter().sum::<f64>() / 3.0;
    let sd = (test_mse.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
    let got_mean: f64 = rows[0][6].parse().unwrap();
    let got_se: f64 = rows[0][7].parse().unwrap();
    assert!((got_mean - mean).abs() < 1e-12);
    assert!((got_se - sd / 3f64.sqrt()).abs() < 1e-12);
}
