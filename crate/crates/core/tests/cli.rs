use std::path::Path;
use std::process::Command;

use framequery::datagen::{self, GeneratorSpec};
use framequery::value::read_jsonl;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_framequery"))
}

#[test]
fn datagen_writes_requested_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w.jsonl");
    let status = bin()
        .args([
            "datagen",
            "--max",
            "500",
            "--seed",
            "9",
            "--missing-rate",
            "0.2",
        ])
        .args(["--missing-attrs", "tenPercent,four", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let bytes = std::fs::read(&out).unwrap();
    let spec = GeneratorSpec::new(500, 9).with_missing(0.2, &["tenPercent", "four"]);
    assert_eq!(bytes, datagen::generate_jsonl(&spec).unwrap());
    let t = read_jsonl(&bytes).unwrap();
    assert_eq!(t.len(), 500);
    for attr in ["tenPercent", "four"] {
        assert_eq!(
            t.rows.iter().filter(|r| !r.contains(attr)).count(),
            100,
            "{attr}"
        );
    }
}

#[test]
fn datagen_rejects_unknown_attribute() {
    let out = bin()
        .args([
            "datagen",
            "--max",
            "10",
            "--missing-rate",
            "0.5",
            "--missing-attrs",
            "nope",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn bench_local_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("w.jsonl");
    let report = dir.path().join("report.json");
    std::fs::write(
        &data,
        datagen::generate_jsonl(&GeneratorSpec::new(2_000, 4).with_missing(0.1, &["tenPercent"]))
            .unwrap(),
    )
    .unwrap();
    let goldens = Path::new(env!("CARGO_MANIFEST_DIR")).join("goldens");
    let status = bin()
        .args([
            "bench",
            "--pack",
            "sqlpp",
            "--connector",
            "local",
            "--seed",
            "4",
            "--exprs",
            "1-13",
        ])
        .args(["--repeat", "2", "--data"])
        .arg(&data)
        .arg("--golden-dir")
        .arg(&goldens)
        .arg("--out")
        .arg(&report)
        .status()
        .unwrap();
    assert!(status.success());
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    let exprs = json["expressions"].as_array().unwrap();
    assert_eq!(exprs.len(), 13);
    for e in exprs {
        assert_eq!(e["oracle_match"], true, "{e}");
        assert_eq!(e["golden_match"], true, "{e}");
        assert!(e["total_ms"].as_f64().unwrap() >= e["expression_ms"].as_f64().unwrap());
    }
    assert_eq!(exprs[12]["result"], "count=200");
    assert_eq!(json["repeat"], 2);
}

#[test]
fn bench_dryrun_prints_queries() {
    let out = bin()
        .args([
            "bench",
            "--pack",
            "cypher",
            "--connector",
            "dryrun",
            "--max",
            "10",
            "--exprs",
            "2,9",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let q = json["expressions"][1]["query"].as_str().unwrap();
    assert!(q.contains("ORDER BY t.unique1 DESC"), "{q}");
}

#[test]
fn bench_usage_errors() {
    for args in [
        vec!["bench", "--exprs", "0-3"],
        vec!["bench", "--connector", "http"],
        vec!["bench", "--pack", "/no/such/pack.conf"],
    ] {
        let out = bin().args(&args).output().unwrap();
        assert!(!out.status.success(), "{args:?}");
        assert!(!out.stderr.is_empty(), "{args:?}");
    }
}
