use std::path::Path;
use std::process::Command;

use gradpack_harness::record::{RunRecord, SCHEMA_VERSION};

fn gradpack(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_gradpack")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = gradpack(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn train_writes_a_record() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    let p = path.to_str().unwrap();
    let stdout = ok(&[
        "train", "--model", "logreg", "--data", "blobs:2,2,10", "--curvature", "kflr", "--lr", "0.1", "--damping", "1",
        "--epochs", "2", "--data-seed", "4", "--out", p,
    ]);
    assert!(stdout.is_empty());
    let rec = RunRecord::read(&path).unwrap();
    assert_eq!(rec.schema_version, SCHEMA_VERSION);
    assert_eq!(rec.command, "train");
    assert_eq!(rec.config["data_seed"], 4);
    assert_eq!(rec.config["data"], "blobs:2,2,10");
    assert_eq!(rec.results["status"], "completed");
    assert_eq!(rec.results["epochs"].as_array().unwrap().len(), 3);
    assert_eq!(RunRecord::from_json(&rec.to_json().unwrap()).unwrap(), rec);
}

#[test]
fn gridsearch_prints_to_stdout() {
    let rec = RunRecord::from_json(&ok(&[
        "gridsearch", "--model", "logreg", "--data", "blobs:2,2,10", "--curvature", "diagggn", "--epochs", "1",
        "--lr-grid", "0.1", "--damping-grid", "1,10", "--seeds", "0,1",
    ]))
    .unwrap();
    assert_eq!(rec.results["cells"].as_array().unwrap().len(), 2);
    assert_eq!(rec.results["reruns"].as_array().unwrap().len(), 2);
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn bench_commands_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    let over = dir.path().join("over.csv");
    let rec = RunRecord::from_json(&ok(&[
        "bench", "overhead", "--model", "mlp2", "--batch-size", "4", "--ext", "batchgrad,variance", "--repeats", "2",
        "--warmup", "0", "--csv", over.to_str().unwrap(),
    ]))
    .unwrap();
    assert!(rec.results["timings"]["for_loop"].is_object());
    let rows = csv_rows(&over);
    assert_eq!(rows.len(), 3);
    assert_eq!(&rows[0][2], "gradient");
    assert_eq!(&rows[2][2], "for_loop");

    let bg = dir.path().join("bg.csv");
    ok(&[
        "bench", "batchgrad", "--model", "logreg", "--batch-sizes", "1,2", "--repeats", "2", "--csv",
        bg.to_str().unwrap(),
    ]);
    let rows = csv_rows(&bg);
    assert_eq!(rows.len(), 4);
    assert_eq!(&rows[3][1], "2");
    let header = csv::Reader::from_path(&bg).unwrap().headers().unwrap().clone();
    assert_eq!(header.iter().collect::<Vec<_>>(), [
        "model", "batch_size", "variant", "repeats", "median_s", "q1_s", "q3_s", "min_s", "max_s", "ratio"
    ]);
}

#[test]
fn bad_input_fails_with_a_message() {
    for args in [
        &["train", "--model", "logreg", "--data", "idx:/nonexistent/a,/nonexistent/b", "--curvature", "kfac", "--lr", "1", "--damping", "1"][..],
        &["train", "--model", "logreg", "--data", "blobs:2,2", "--curvature", "kfac", "--lr", "1", "--damping", "1"],
        &["bench", "overhead", "--model", "nope"],
        &["gridsearch", "--model", "logreg", "--data", "blobs:2,2,3", "--curvature", "kfac", "--seeds", ""],
    ] {
        let out = gradpack(args);
        assert!(!out.status.success(), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}
