use std::path::Path;
use std::process::{Command, Output};

use monoalign::cli::{SWEEP_REPORT_FILE, TRAIN_LOG_FILE};
use tempfile::TempDir;

fn monoalign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_monoalign"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_dataset(dir: &Path) -> String {
    let out = dir.join("d.json");
    let o = monoalign(&[
        "gen-data", "--out", p(&out), "--seed", "3", "--train-size", "12", "--val-size", "4",
        "--test-size", "4", "--max-len", "8",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out.to_str().unwrap().to_string()
}

#[test]
fn gen_data_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for f in [&a, &b] {
        let o = monoalign(&["gen-data", "--out", p(f), "--seed", "7", "--train-size", "30"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn gen_data_default_sizes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("d.json");
    assert!(monoalign(&["gen-data", "--out", p(&out)]).status.success());
    let data = monoalign::Dataset::load(&out).unwrap();
    assert_eq!((data.train.len(), data.val.len(), data.test.len()), (2000, 200, 200));
}

#[test]
fn gen_data_missing_parent_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("nope").join("d.json");
    let o = monoalign(&["gen-data", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("nope"), "{}", stderr(&o));
}

#[test]
fn gen_data_bad_config_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("d.json");
    let o = monoalign(&["gen-data", "--out", p(&out), "--min-len", "9", "--max-len", "3"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn unknown_flag_and_missing_subcommand() {
    assert_eq!(monoalign(&["analyze", "--frobnicate"]).status.code(), Some(1));
    assert_eq!(monoalign(&[]).status.code(), Some(1));
}

#[test]
fn train_one_epoch_with_lambda_zero() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path());
    let out = dir.path().join("run");
    let o = monoalign(&["train", "--data", &data, "--lambda", "0", "--epochs", "1", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = std::fs::read_to_string(out.join(TRAIN_LOG_FILE)).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], monoalign::train::TRAIN_LOG_HEADER);
    assert_eq!(lines.len(), 2);
    let cols: Vec<f64> = lines[1].split(',').map(|c| c.parse().unwrap()).collect();
    let (train_lt, train_la) = (cols[1], cols[3]);
    assert!(train_la.is_finite() && train_la > 0.0);
    assert_eq!(train_lt + 0.0 * train_la, train_lt);
    assert!(out.join("checkpoint.json").is_file());
}

#[test]
fn train_is_byte_reproducible() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path());
    let runs = [dir.path().join("r1"), dir.path().join("r2")];
    for r in &runs {
        let o = monoalign(&["train", "--data", &data, "--epochs", "3", "--seed", "5", "--out", p(r)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in [TRAIN_LOG_FILE, "checkpoint.json"] {
        assert_eq!(std::fs::read(runs[0].join(f)).unwrap(), std::fs::read(runs[1].join(f)).unwrap());
    }
}

#[test]
fn train_missing_data_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let o = monoalign(&[
        "train", "--data", p(&dir.path().join("missing.json")), "--out", p(&dir.path().join("r")),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("missing.json"));
}

#[test]
fn train_bad_hyperparameter_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path());
    let o = monoalign(&["train", "--data", &data, "--lr", "-1", "--out", p(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn divergence_exits_two_with_epoch() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path());
    let o = monoalign(&[
        "train", "--data", &data, "--lr", "1e300", "--epochs", "3", "--out", p(&dir.path().join("r")),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged at epoch"), "{}", stderr(&o));
}

#[test]
fn sweep_rows() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path());
    let one = dir.path().join("one");
    let o = monoalign(&["sweep", "--data", &data, "--lambdas", "0", "--epochs", "3", "--out", p(&one)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = std::fs::read_to_string(one.join(SWEEP_REPORT_FILE)).unwrap();
    assert_eq!(report.lines().count(), 2);
    assert!(report.lines().next().unwrap().contains("first_monotonic_epoch"));

    let grid = dir.path().join("grid");
    let o = monoalign(&["sweep", "--data", &data, "--epochs", "3", "--out", p(&grid)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = std::fs::read_to_string(grid.join(SWEEP_REPORT_FILE)).unwrap();
    let lambdas: Vec<f64> = report
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(lambdas, vec![0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2]);
}

fn analyze(dir: &Path, csv: &str) -> Output {
    let path = dir.join("a.csv");
    std::fs::write(&path, csv).unwrap();
    monoalign(&["analyze", "--alignment", p(&path), "--delta", "0.01"])
}

fn report_loss(o: &Output) -> f64 {
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    v["loss"].as_f64().unwrap()
}

#[test]
fn analyze_reports() {
    let dir = TempDir::new().unwrap();
    let o = analyze(dir.path(), "3,3\n1,0,0\n0,1,0\n0,0,1\n");
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(report_loss(&o), 0.0);

    let o = analyze(dir.path(), "3,3\n0,0,1\n0,1,0\n1,0,0\n");
    assert!((report_loss(&o) - 0.6733333).abs() < 1e-6);
}

#[test]
fn analyze_rejects_bad_column_sum() {
    let dir = TempDir::new().unwrap();
    let o = analyze(dir.path(), "2,2\n0.5,0.5\n0.3,0.5\n");
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("column-sum tolerance"), "{}", stderr(&o));
}

#[test]
fn analyze_rejects_ragged_rows() {
    let dir = TempDir::new().unwrap();
    let o = analyze(dir.path(), "2,2\n1,0\n0\n");
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gradcheck_passes_and_catches_a_corrupted_rule() {
    let o = monoalign(&["gradcheck", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    for op in ["matmul", "softmax_cols", "conv1d", "align_loss", "model[4 tokens]"] {
        assert!(out.contains(&format!("PASS {op}")), "{out}");
    }

    let o = monoalign(&["gradcheck", "--corrupt-op", "sigmoid"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sigmoid"));
    assert!(String::from_utf8(o.stdout).unwrap().contains("FAIL sigmoid"));
}
