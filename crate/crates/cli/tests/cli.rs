use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn onepath(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_onepath"))
        .args(args)
        .env("ONEPATH_SEED", "11")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = onepath(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn keygen_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let keys = dir.path().join("keys");
    let stdout = ok(&["keygen", "--out", path(&keys)]);
    assert!(stdout.contains("W = 1661009920"), "{stdout}");
    for file in ["group.bin", "params.json", "mpk.bin", "msk.bin", "sk1.key", "sk2.key", "sk3.key"] {
        assert!(keys.join(file).exists(), "{file} missing");
    }

    assert_eq!(onepath(&["keygen", "--out", path(&keys)]).status.code(), Some(1));
    assert!(onepath(&["keygen", "--out", path(&keys), "--force"]).status.success());

    let other = dir.path().join("other");
    let wide = onepath(&["keygen", "--out", path(&other), "--ring-bits", "64"]);
    assert_eq!(wide.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&wide.stderr).contains("(A_max + B_max) * 2^l"));
    assert_eq!(onepath(&["keygen", "--out", path(&other), "--feature-bits", "10"]).status.code(), Some(3));
    assert_eq!(onepath(&["keygen", "--out", path(&other), "--security", "96"]).status.code(), Some(3));
}

#[test]
fn pipeline_from_training_to_audit() {
    let dir = tempfile::tempdir().unwrap();
    let keys = dir.path().join("keys");
    let model = dir.path().join("model.json");
    let prepared = dir.path().join("prepared");
    let query = dir.path().join("query.bin");
    ok(&["keygen", "--out", path(&keys)]);
    let summary = ok(&["train", "--data", path(&fixture("heart_disease.csv")), "--depth", "3", "--out", path(&model)]);
    assert!(summary.contains("\"padded_depth\": 3"), "{summary}");
    ok(&["prepare", "--keys", path(&keys), "--model", path(&model), "--out", path(&prepared)]);
    ok(&[
        "share", "--keys", path(&keys), "--prepared", path(&prepared), "--model", path(&model),
        "--input", "67,1,2,197,202,0,1,156,1,4.3,1,0,1", "--out", path(&query),
    ]);

    let run = ["--keys", path(&keys), "--prepared", path(&prepared), "--model", path(&model)];
    let mut args = vec!["infer"];
    args.extend(run);
    let transcript = dir.path().join("transcript.jsonl");
    args.extend(["--query", path(&query), "--json", "--transcript", path(&transcript)]);
    let json: serde_json::Value = serde_json::from_str(&ok(&args)).unwrap();
    let records = std::fs::read_to_string(&transcript).unwrap();
    assert!(records.lines().count() > 4, "{records}");
    for line in records.lines() {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        for field in ["seq", "from", "to", "kind", "bytes", "t_ns"] {
            assert!(record.get(field).is_some(), "{field} missing in {line}");
        }
    }
    assert_eq!(json["label"], json["oracle_label"]);
    assert_eq!(json["counters"]["sine_evaluations"], 3);
    assert_eq!(json["counters"]["fe_decryptions"], 6);
    assert_eq!(json["counters"]["subtree_nodes_sent"], 11);

    let mut args = vec!["audit"];
    args.extend(run);
    args.extend(["--query", path(&query)]);
    let report: serde_json::Value = serde_json::from_str(&ok(&args)).unwrap();
    let checks = report["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 11);
    assert!(checks.iter().all(|c| c["passed"] == true), "{report}");

    // A damaged key file is reported and refused.
    std::fs::write(keys.join("mpk.bin"), b"garbage").unwrap();
    let mut args = vec!["infer"];
    args.extend(run);
    args.extend(["--query", path(&query)]);
    let out = onepath(&args);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mpk.bin"));
}

#[test]
fn bench_json_report() {
    let out = ok(&[
        "bench", "--data", path(&fixture("iris.csv")), "--depth", "3", "--repetitions", "4", "--jobs", "2", "--json", "-",
    ]);
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["schema"], "onepath-bench/v1");
    assert_eq!(report["dataset"], "iris");
    assert_eq!(report["repetitions"], 4);
    assert_eq!(report["agreement"]["rate"], 1.0);
    assert_eq!(report["audits_passed"], 4);
    assert_eq!(report["one_path"]["subtree_nodes_sent_per_query"], 11);
    assert!(report["query_kb_total"].as_f64().unwrap() > 0.0);

    let bad = onepath(&["bench", "--data", path(&fixture("iris.csv")), "--depth", "18"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn selftest_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let stdout = ok(&["selftest", "--trees", "2", "--json", path(&a)]);
    assert!(!stdout.contains("FAIL"), "{stdout}");
    ok(&["selftest", "--trees", "2", "--json", path(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}
