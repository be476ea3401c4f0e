use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pinlf::checkpoint;
use pinlf::experiment;
use serde_json::Value;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/ratings.csv")
}

fn pinlf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pinlf")).args(args).output().expect("binary runs")
}

fn dataset_args(extra: &[&str]) -> Vec<String> {
    let mut v: Vec<String> = vec![
        "--dataset".into(),
        fixture().display().to_string(),
        "--format".into(),
        "comma".into(),
        "--header".into(),
    ];
    v.extend(extra.iter().map(|s| s.to_string()));
    v
}

fn run(cmd: &str, extra: &[&str]) -> Output {
    let mut args = vec![cmd.to_string()];
    args.extend(dataset_args(extra));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    pinlf(&refs)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn help_exits_zero_and_unknown_flag_exits_one() {
    assert_eq!(pinlf(&["--help"]).status.code(), Some(0));
    assert_eq!(pinlf(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(pinlf(&[]).status.code(), Some(1));
}

#[test]
fn missing_dataset_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = pinlf(&["train", "--dataset", "/nonexistent/ratings.tsv", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/ratings.tsv"));
}

#[test]
fn malformed_dataset_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "1\t2\t3\n1\t3\tminus\n").unwrap();
    let out = pinlf(&["prepare", "--dataset", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn bad_rotation_and_config_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    assert_eq!(run("train", &["--rotation", "7", "--out", out_dir]).status.code(), Some(1));
    assert_eq!(run("train", &["--max-iters", "0", "--out", out_dir]).status.code(), Some(1));
    assert_eq!(run("sweep", &["--rotations", "5", "--out", out_dir]).status.code(), Some(1));
}

#[test]
fn bad_thread_count_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pinlf"))
        .args(["prepare", "--dataset", fixture().to_str().unwrap(), "--format", "comma", "--header"])
        .args(["--out", dir.path().to_str().unwrap()])
        .env("PINLF_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn diverging_train_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("train", &["--ki", "1e308", "--f", "2", "--max-iters", "5", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sweep_with_every_run_diverging_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        "sweep",
        &["--ki-grid", "1e308", "--rotations", "0", "--f", "2", "--max-iters", "5", "--out", dir.path().to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(3));
    let report = experiment::read_report(&dir.path().join("sweep.json")).unwrap();
    assert!(report.cells[0].metrics().is_none());
}

#[test]
fn prepare_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("prepare", &["--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = read_json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["dataset"]["n_entries"], 240);
    assert_eq!(manifest["dataset"]["n_rows"], 30);
    let splits = manifest["splits"].as_array().unwrap();
    assert_eq!(splits.len(), 5);
    for s in splits {
        assert_eq!(s["train_len"], 168);
        assert_eq!(s["validation_len"], 24);
        assert_eq!(s["test_len"], 48);
    }
}

#[test]
fn train_writes_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("train", &["--f", "3", "--max-iters", "25", "--ki", "0.02", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("iteration,objective,val_rmse,elapsed_ms"));
    let rows: Vec<&str> = lines.collect();
    let summary = read_json(&dir.path().join("summary.json"));
    assert_eq!(rows.len() as u64, summary["iterations_run"].as_u64().unwrap());
    assert!(rows[0].starts_with("1,"));
    assert!(summary["best_val_rmse"].as_f64().unwrap() <= summary["initial_val_rmse"].as_f64().unwrap());
    assert_eq!(summary["config"]["hyper"]["ki"], 0.02);
}

#[test]
fn checkpoint_resume_continues_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).display().to_string();
    let common = ["--f", "3", "--ki", "0.03", "--error-threshold", "0"];

    let full = run("train", &[&common[..], &["--max-iters", "20", "--out", &p("full"), "--checkpoint", &p("full.ck")]].concat());
    assert!(full.status.success());
    let half = run("train", &[&common[..], &["--max-iters", "10", "--out", &p("a"), "--checkpoint", &p("a.ck")]].concat());
    assert!(half.status.success());
    let rest = run(
        "train",
        &[&common[..], &["--max-iters", "10", "--out", &p("b"), "--resume", &p("a.ck"), "--checkpoint", &p("b.ck")]].concat(),
    );
    assert!(rest.status.success(), "{}", String::from_utf8_lossy(&rest.stderr));

    let load = |name: &str| checkpoint::read_state(std::fs::File::open(p(name)).unwrap()).unwrap();
    let (whole, resumed) = (load("full.ck"), load("b.ck"));
    assert_eq!(resumed.iteration, 20);
    assert_eq!(whole.factors, resumed.factors);
    assert_eq!(whole.accumulator, resumed.accumulator);

    let trace = std::fs::read_to_string(dir.path().join("b/trace.csv")).unwrap();
    assert!(trace.lines().nth(1).unwrap().starts_with("11,"));
}

#[test]
fn sweep_and_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let out = run("sweep", &["--f", "3", "--max-iters", "30", "--ki-grid", "0,0.04", "--out", out_dir]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let csv = std::fs::read(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.iter().filter(|&&b| b == b'\n').count(), 11);
    let report = experiment::read_report(&dir.path().join("sweep.json")).unwrap();
    assert_eq!(report.cells.len(), 10);
    let traces: Vec<_> = std::fs::read_dir(dir.path().join("traces")).unwrap().collect();
    assert_eq!(traces.len(), 10);
    for cell in &report.cells {
        assert!(dir.path().join("traces").join(format!("{}.csv", cell.run_id)).exists());
    }

    std::fs::remove_file(dir.path().join("sweep.csv")).unwrap();
    let again = pinlf(&["report", "--out", out_dir]);
    assert!(again.status.success());
    assert_eq!(std::fs::read(dir.path().join("sweep.csv")).unwrap(), csv);
    assert_eq!(String::from_utf8_lossy(&again.stdout), String::from_utf8_lossy(&out.stdout));
}

#[test]
fn report_without_sweep_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(pinlf(&["report", "--out", dir.path().to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn double_colon_format_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ratings.dat");
    let body: String = (0..40).map(|i| format!("{}::{}::{}::97830{i}\n", i % 7, i % 9, 1 + i % 5)).collect();
    std::fs::write(&path, body).unwrap();
    let out = pinlf(&["prepare", "--dataset", path.to_str().unwrap(), "--format", "mldouble-colon", "--rotations", "0", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_json(&dir.path().join("manifest.json"))["dataset"]["n_entries"], 40);
}
