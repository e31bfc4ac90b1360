use std::path::Path;
use std::process::{Command, Output};

use oir_core::pipeline::CSV_HEADER;
use serde_json::Value;

fn oir(args: &[&str], data_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_oir"));
    cmd.args(args).env_remove("OIR_DATA_DIR").env_remove("OIR_PORT");
    if let Some(d) = data_dir {
        cmd.env("OIR_DATA_DIR", d);
    }
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn fit_run_query() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let store = dir.path().join("store");
    oir(
        &["gen-synthetic", "--out", &p("train.csv"), "--per-intent", "60", "--intents", "book_flight,cancel_order,check_balance,pay_bill"],
        None,
    );
    oir(&["gen-synthetic", "--out", &p("batch.jsonl"), "--per-intent", "20", "--seed", "4", "--jsonl"], None);
    let fit = oir(&["fit", "--train", &p("train.csv"), "--model-out", &p("model.json")], None);
    assert!(String::from_utf8(fit.stdout).unwrap().contains("pay_bill"));
    assert!(dir.path().join("model.json.vocab.json").exists());

    let run = oir(&["run", "--batch", &p("batch.jsonl"), "--model", &p("model.json"), "--seed", "1"], Some(&store));
    let job: Value = serde_json::from_slice(&run.stdout).unwrap();
    assert_eq!(job["id"], "job-000001");
    assert_eq!(job["status"], "completed");
    assert_eq!(job["counts"]["total"], 120);
    assert_eq!(job["config_snapshot"]["pipeline"]["clustering"]["seed"], 1);

    let page = oir(&["query", "--job", "job-000001", "--source", "discovered", "--limit", "1000"], Some(&store));
    let page: Value = serde_json::from_slice(&page.stdout).unwrap();
    let labels: std::collections::BTreeSet<&str> = page["records"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["label"].as_str().unwrap())
        .collect();
    assert!(labels.contains("package_track") && labels.contains("password_reset"), "{labels:?}");

    // the flag wins over the environment
    let other = dir.path().join("elsewhere");
    let csv = oir(
        &["--data-dir", store.to_str().unwrap(), "query", "--job", "job-000001", "--format", "csv", "--limit", "1"],
        Some(&other),
    );
    let csv = String::from_utf8(csv.stdout).unwrap();
    assert_eq!(csv.lines().next(), Some(CSV_HEADER));
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn bench_sweeps_default_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("syn.csv");
    oir(&["gen-synthetic", "--out", data.to_str().unwrap(), "--per-intent", "30"], None);
    let out = oir(
        &["bench", "--dataset", data.to_str().unwrap(), "--seed", "2", "--out-dir", dir.path().to_str().unwrap()],
        None,
    );
    let table = String::from_utf8(out.stdout).unwrap();
    assert_eq!(table.matches("discovery NMI").count(), 3);
    for r in ["0.25", "0.5", "0.75"] {
        let path = dir.path().join(format!("bench_syn_{r}_2.json"));
        let report = oir_core::bench::BenchReport::from_json(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(report.split.seed, 2);
    }
}

#[test]
fn errors_exit_non_zero() {
    let out = Command::new(env!("CARGO_BIN_EXE_oir"))
        .args(["query", "--job", "job-000042", "--data-dir"])
        .arg(tempfile::tempdir().unwrap().path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not found"));
}
