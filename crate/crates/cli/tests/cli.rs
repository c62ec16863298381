//! End-to-end contract tests for the command-line interface, run against
//! a miniature dataset so they stay fast.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_latentmorph"))
}

fn run_ok(args: &[&str], dir: &Path) {
    let out = bin().args(args).current_dir(dir).output().unwrap();
    assert!(
        out.status.success(),
        "command {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn gen_small(dir: &Path) {
    run_ok(
        &["gen-data", "--data", "data", "--seed", "7", "--samples-per-class", "12"],
        dir,
    );
}

fn train_small(dir: &Path, iters: &str, extra: &[&str]) {
    let mut args = vec![
        "train",
        "--data",
        "data",
        "--out",
        "out",
        "--checkpoint-dir",
        "ckpt",
        "--seed",
        "7",
        "--batch",
        "4",
        "--max-iters",
        iters,
        "--eval-every",
        "5",
    ];
    args.extend_from_slice(extra);
    run_ok(&args, dir);
}

#[test]
fn usage_errors_exit_one() {
    let out = bin().arg("definitely-not-a-command").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin().args(["train", "--data", "x", "--lr=-3.0"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1), "negative lr should be a usage error");
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["train", "--data", "no-such-dataset", "--out", "out"])
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn zero_iteration_training_writes_initial_checkpoint_and_empty_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    gen_small(tmp.path());
    train_small(tmp.path(), "0", &[]);
    let metrics = std::fs::read_to_string(tmp.path().join("out/metrics.csv")).unwrap();
    assert_eq!(metrics, "iter,L_rec,L_KL,L_MLP,total,val_total,val_acc\n");
    assert!(tmp.path().join("ckpt/last.ckpt").exists());
    assert!(tmp.path().join("ckpt/best.ckpt").exists());

    // An untrained head classifies a balanced split at chance level.
    run_ok(
        &["eval", "--data", "data", "--out", "out", "--checkpoint", "ckpt/last.ckpt", "--split", "train"],
        tmp.path(),
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/report.json")).unwrap())
            .unwrap();
    let acc = report["accuracy"].as_f64().unwrap();
    assert!((acc - 0.5).abs() <= 0.1, "untrained accuracy {acc} not near chance");
    let confusion = report["confusion"].as_array().unwrap();
    let total: u64 = confusion
        .iter()
        .flat_map(|row| row.as_array().unwrap().iter())
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(total, report["n"].as_u64().unwrap());
}

#[test]
fn same_seed_training_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    gen_small(tmp.path());
    train_small(tmp.path(), "8", &[]);
    let metrics1 = std::fs::read(tmp.path().join("out/metrics.csv")).unwrap();
    let ckpt1 = std::fs::read(tmp.path().join("ckpt/last.ckpt")).unwrap();
    train_small(tmp.path(), "8", &[]);
    assert_eq!(metrics1, std::fs::read(tmp.path().join("out/metrics.csv")).unwrap());
    assert_eq!(ckpt1, std::fs::read(tmp.path().join("ckpt/last.ckpt")).unwrap());
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    gen_small(tmp.path());
    train_small(tmp.path(), "3", &[]);
    let path = tmp.path().join("ckpt/last.ckpt");
    let original = std::fs::read(&path).unwrap();
    let loaded = latentmorph::checkpoint::load(&path).unwrap();
    let copy = tmp.path().join("ckpt/copy.ckpt");
    latentmorph::checkpoint::save(&copy, &loaded).unwrap();
    assert_eq!(original, std::fs::read(&copy).unwrap());
}

#[test]
fn resume_matches_uninterrupted_training() {
    let tmp = tempfile::tempdir().unwrap();
    gen_small(tmp.path());

    train_small(tmp.path(), "10", &[]);
    let full = std::fs::read(tmp.path().join("ckpt/last.ckpt")).unwrap();

    train_small(tmp.path(), "5", &[]);
    std::fs::copy(tmp.path().join("ckpt/last.ckpt"), tmp.path().join("ckpt/half.ckpt")).unwrap();
    train_small(tmp.path(), "10", &["--resume", "ckpt/half.ckpt"]);
    let resumed = std::fs::read(tmp.path().join("ckpt/last.ckpt")).unwrap();
    assert_eq!(full, resumed, "train 5 + resume 5 differs from train 10");
}

#[test]
fn architecture_mismatch_is_reported_by_name() {
    let tmp = tempfile::tempdir().unwrap();
    gen_small(tmp.path());
    train_small(tmp.path(), "1", &[]);
    let path = tmp.path().join("ckpt/last.ckpt");
    let mut ckpt = latentmorph::checkpoint::load(&path).unwrap();
    ckpt.params[2].name = "encoder.conv9.kernel".to_string();
    let err = match latentmorph::checkpoint::to_model(&ckpt) {
        Ok(_) => panic!("mismatched checkpoint loaded successfully"),
        Err(e) => e.to_string(),
    };
    assert!(err.contains("encoder.conv9.kernel"), "error should name the parameter: {err}");
}

#[test]
fn navigation_rerun_is_identical_and_bounded() {
    let tmp = tempfile::tempdir().unwrap();
    gen_small(tmp.path());
    train_small(tmp.path(), "3", &[]);
    let nav = |_: ()| {
        run_ok(
            &[
                "navigate", "--data", "data", "--out", "out", "--checkpoint", "ckpt/last.ckpt",
                "--sample-id", "20", "--target", "1", "--max-iters", "6",
            ],
            tmp.path(),
        );
        std::fs::read(tmp.path().join("out/trace_20_to_1/steps.csv")).unwrap()
    };
    let first = nav(());
    assert_eq!(first, nav(()), "navigation rerun changed steps.csv");
    let rows = String::from_utf8(first).unwrap().lines().count() - 1;
    assert!(rows <= 7, "expected at most max_iters+1 rows, got {rows}");
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("out/trace_20_to_1/manifest.json")).unwrap(),
    )
    .unwrap();
    assert!(manifest["stop_reason"] == "threshold" || manifest["stop_reason"] == "max_iters");
}

#[test]
fn embedding_outputs_are_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    gen_small(tmp.path());
    train_small(tmp.path(), "3", &[]);
    run_ok(
        &[
            "navigate", "--data", "data", "--out", "out", "--checkpoint", "ckpt/last.ckpt",
            "--sample-id", "20", "--target", "1", "--max-iters", "4",
        ],
        tmp.path(),
    );
    run_ok(
        &[
            "embed", "--data", "data", "--out", "out", "--checkpoint", "ckpt/last.ckpt",
            "--trace-dir", "out/trace_20_to_1", "--k", "4",
        ],
        tmp.path(),
    );
    let csv = std::fs::read_to_string(tmp.path().join("out/embedding.csv")).unwrap();
    let n_rows = csv.lines().count() - 1;
    let n_trace = csv.lines().filter(|l| l.contains(",trace,")).count();
    assert_eq!(n_rows, 14 + n_trace, "row count != n_train + n_trace");
    assert!(n_trace >= 1);

    let svg = std::fs::read_to_string(tmp.path().join("out/plot.svg")).unwrap();
    let markers = svg.matches("<circle").count();
    // one marker per embedded point plus one per legend entry
    assert_eq!(markers, n_rows + 3);

    // Without a trace the embedding equals the plain train-set embedding.
    run_ok(
        &["embed", "--data", "data", "--out", "out2", "--checkpoint", "ckpt/last.ckpt", "--k", "4"],
        tmp.path(),
    );
    let plain = std::fs::read_to_string(tmp.path().join("out2/embedding.csv")).unwrap();
    let joint_train: Vec<&str> =
        csv.lines().take_while(|l| !l.contains(",trace,")).collect();
    assert_eq!(plain.lines().count() - 1, 14);
    // Train rows of the joint run exist and carry the same ids/labels.
    for (a, b) in plain.lines().zip(joint_train.iter()) {
        let id_a = a.split(',').next().unwrap();
        assert_eq!(id_a, b.split(',').next().unwrap());
    }
}
