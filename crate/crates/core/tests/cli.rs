use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dpx::metrics::{read_metrics_csv, CSV_HEADER};

fn dpx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpx"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("DPX_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Tiny convex dataset plus certified ground truth; returns (dataset, truth).
fn tiny_setup(dir: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("tiny.dpx");
    let truth = dir.join("tiny.dpxg");
    ok(dpx(&["gen-data", "--out", s(&data), "--n", "6", "--p", "2", "--count", "40", "--seed", "5"]));
    ok(dpx(&["oracle", "--dataset", s(&data), "--out", s(&truth)]));
    (data, truth)
}

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.dpx");
    let b = dir.path().join("b.dpx");
    let c = dir.path().join("c.dpx");
    let base = ["--n", "2", "--p", "1", "--count", "10"];
    let ha = ok(dpx(&[&["gen-data", "--out", s(&a), "--seed", "3"][..], &base].concat()));
    let hb = ok(dpx(&[&["gen-data", "--out", s(&b), "--seed", "3"][..], &base].concat()));
    let hc = ok(dpx(&[&["gen-data", "--out", s(&c), "--seed", "4"][..], &base].concat()));
    assert_eq!(ha, hb);
    assert_ne!(ha, hc);
    assert_eq!(ha.trim().len(), 64);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn oracle_refuses_corrupt_or_unexpected_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.dpx");
    let hash = ok(dpx(&["gen-data", "--out", s(&data), "--n", "3", "--p", "1", "--count", "10"]));
    let truth = dir.path().join("t.dpxg");

    let wrong = "0".repeat(64);
    let out = dpx(&["oracle", "--dataset", s(&data), "--out", s(&truth), "--dataset-hash", &wrong]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not match"));
    ok(dpx(&["oracle", "--dataset", s(&data), "--out", s(&truth), "--dataset-hash", hash.trim()]));

    let mut bytes = std::fs::read(&data).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    std::fs::write(&data, bytes).unwrap();
    let out = dpx(&["oracle", "--dataset", s(&data), "--out", s(&truth)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));
}

#[test]
fn zero_epochs_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let (data, truth) = tiny_setup(dir.path());
    let run = dir.path().join("run0");
    ok(dpx(&[
        "train", "--dataset", s(&data), "--ground-truth", s(&truth), "--out-dir", s(&run), "--epochs", "0",
    ]));
    let csv = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(csv, format!("{}\n", CSV_HEADER.join(",")));
    assert!(run.join("model.dpxm").exists());
}

#[test]
fn eval_matches_final_training_row() {
    let dir = tempfile::tempdir().unwrap();
    let (data, truth) = tiny_setup(dir.path());
    let run = dir.path().join("run");
    let config = dir.path().join("cfg.json");
    std::fs::write(
        &config,
        format!(
            r#"{{"dataset": "{}", "ground_truth": "{}", "output_dir": "{}", "method": "dda",
                "epochs": 4, "batch_size": 8, "hidden_width": 12, "eval_every": 2}}"#,
            s(&data),
            s(&truth),
            s(&run)
        ),
    )
    .unwrap();
    ok(dpx(&["train", "--config", s(&config), "--strict-serial"]));
    let rows = read_metrics_csv(std::fs::File::open(run.join("metrics.csv")).unwrap()).unwrap();
    assert_eq!(rows.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![2, 4]);

    let out_csv = dir.path().join("eval.csv");
    ok(dpx(&["eval", "--config", s(&run.join("config.json")), "--out", s(&out_csv), "--strict-serial"]));
    let eval = read_metrics_csv(std::fs::File::open(&out_csv).unwrap()).unwrap();
    assert_eq!(eval.len(), 1);
    // dual ascent recovery is closed form, so eval must agree with the last row
    assert_eq!(eval[0], rows[1]);
}

#[test]
fn strict_serial_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (data, truth) = tiny_setup(dir.path());
    let mut outputs = Vec::new();
    for name in ["r1", "r2"] {
        let run = dir.path().join(name);
        ok(dpx(&[
            "train", "--dataset", s(&data), "--ground-truth", s(&truth), "--out-dir", s(&run),
            "--method", "dalm", "--epochs", "3", "--batch-size", "8", "--hidden-width", "16",
            "--learning-rate", "1e-3", "--strict-serial",
        ]));
        outputs.push((
            std::fs::read(run.join("metrics.csv")).unwrap(),
            std::fs::read(run.join("model.dpxm")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn check_reports_injected_fault_by_name() {
    let out = dpx(&["check", "--quick", "--inject-fault", "dual-gradient-sign"]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().any(|l| l.starts_with("FAIL dual-gradients")), "{text}");
    assert!(text.lines().any(|l| l.starts_with("PASS network-gradients")), "{text}");

    let clean = ok(dpx(&["check", "--quick", "--threads", "1"]));
    assert!(!clean.contains("FAIL"), "{clean}");
}
