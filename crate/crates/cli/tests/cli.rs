//! End-to-end runs of the `olap` binary.

use std::path::Path;
use std::process::{Command, Output};

use olap_cli::trace;

fn olap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_olap")).args(args).output().expect("olap runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn train_synthetic(out: &Path, procedure: &str, split: &str) -> Output {
    olap(&[
        "train", "--dataset", "synthetic", "--procedure", procedure, "--split", split, "--steps", "60", "--hidden", "6",
        "--record-every", "20", "--out-dir", out.to_str().unwrap(),
    ])
}

#[test]
fn train_writes_manifest_trace_and_model() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_synthetic(dir.path(), "ol", "0");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.path().join("synthetic/ol/split0");
    for f in ["manifest.json", "trace.csv", "model.json"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let text = std::fs::read_to_string(run.join("trace.csv")).unwrap();
    assert!(text.starts_with("# manifest-digest: "));
    let t = trace::parse(&text).unwrap();
    assert_eq!(t.steps.iter().map(|r| r.step).collect::<Vec<_>>(), vec![20, 40, 60]);
    assert!(t.best.is_none());
    let eval = t.eval.expect("eval row");
    assert!(eval.test_rmse.is_finite());
    assert!(eval.test_loglik.is_finite() && eval.step == 60);
    let model: olap_cli::run::ModelFile =
        serde_json::from_str(&std::fs::read_to_string(run.join("model.json")).unwrap()).unwrap();
    assert_eq!(model.map_comparison.params.len(), olap_cli::run::QUANTILE_LEVELS.len());
    assert!(model.map_comparison.abs_difference.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn offline_trace_marks_the_selected_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_synthetic(dir.path(), "offline", "1");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let t = trace::read(&dir.path().join("synthetic/offline/split1/trace.csv")).unwrap();
    let best = t.best.expect("best row");
    assert!((1..=60).contains(&best.step));
}

#[test]
fn manifest_rerun_reproduces_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train_synthetic(dir.path(), "lm", "0")), 0);
    let run = dir.path().join("synthetic/lm/split0");
    let first = std::fs::read(run.join("trace.csv")).unwrap();
    let again = dir.path().join("again");
    let o = olap(&["train", "--manifest", run.join("manifest.json").to_str().unwrap(), "--out-dir", again.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(first, std::fs::read(again.join("synthetic/lm/split0/trace.csv")).unwrap());
}

#[test]
fn evaluate_summarises_completed_runs() {
    let dir = tempfile::tempdir().unwrap();
    for p in ["ol", "offline"] {
        assert_eq!(code(&train_synthetic(dir.path(), p, "0,1")), 0);
    }
    let out = dir.path().to_str().unwrap();
    let o = olap(&["evaluate", "--out-dir", out, "--dataset", "synthetic", "--procedure", "ol", "--procedure", "offline", "--split", "0-1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let per_split = std::fs::read_to_string(dir.path().join("per_split.csv")).unwrap();
    assert_eq!(per_split.lines().count(), 1 + 4);
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2);
}

#[test]
fn evaluate_lists_every_missing_run() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train_synthetic(dir.path(), "ol", "0")), 0);
    let out = dir.path().to_str().unwrap();
    let o = olap(&["evaluate", "--out-dir", out, "--dataset", "synthetic", "--procedure", "ol", "--procedure", "lm", "--split", "0-1"]);
    assert_eq!(code(&o), 3);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("3 run(s)"), "{err}");
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&olap(&["train", "--dataset", "synthetic", "--procedure", "sgd"])), 2);
    assert_eq!(code(&olap(&["train"])), 2);
    assert_eq!(code(&olap(&["bogus"])), 2);
}

#[test]
fn unknown_dataset_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = olap(&["train", "--dataset", "nope", "--data-dir", dir.path().to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn verify_passes_and_catches_a_flipped_gauss_newton_step() {
    let ok = olap(&["verify", "--quick"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stdout));
    let bad = olap(&["verify", "--quick", "--corrupt-ggn-sign"]);
    assert_eq!(code(&bad), 1);
    assert!(String::from_utf8_lossy(&bad.stdout).contains("[FAIL] evidence_ordering"));
}
