use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn hllguard(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hllguard"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = hllguard(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(dir: &Path, args: &[&str]) -> Value {
    serde_json::from_str(&ok(dir, args)).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn empty_sketch_info() {
    let t = TempDir::new().unwrap();
    ok(t.path(), &["sketch", "new", "-b", "12", "--out", "a.hll"]);
    let info = json(t.path(), &["sketch", "info", "a.hll"]);
    assert_eq!(info["m"], 4096);
    assert_eq!(info["b"], 12);
    assert_eq!(info["salted"], false);
    assert_eq!(info["zero_registers"], 4096);
}

#[test]
fn insert_generated_flows_then_estimate() {
    let t = TempDir::new().unwrap();
    ok(t.path(), &["sketch", "new", "-b", "14", "--out", "a.hll"]);
    ok(
        t.path(),
        &["sketch", "insert", "a.hll", "--generate", "10000", "--seed", "7"],
    );
    let est: f64 = ok(t.path(), &["sketch", "estimate", "a.hll"]).trim().parse().unwrap();
    // 4 standard errors at M = 16384
    let band = 4.0 * 1.04 / 128.0 * 10_000.0;
    assert!((est - 10_000.0).abs() <= band, "estimate {est}");
}

#[test]
fn merge_of_equal_configs_matches_union() {
    let t = TempDir::new().unwrap();
    for f in ["a.hll", "b.hll", "ab.hll"] {
        ok(t.path(), &["sketch", "new", "-b", "10", "--out", f]);
    }
    ok(
        t.path(),
        &["sketch", "insert", "a.hll", "--generate", "3000", "--seed", "1"],
    );
    ok(
        t.path(),
        &["sketch", "insert", "b.hll", "--generate", "3000", "--seed", "2"],
    );
    ok(
        t.path(),
        &["sketch", "insert", "ab.hll", "--generate", "3000", "--seed", "1"],
    );
    ok(
        t.path(),
        &["sketch", "insert", "ab.hll", "--generate", "3000", "--seed", "2"],
    );
    ok(t.path(), &["sketch", "merge", "a.hll", "b.hll", "--out", "m.hll"]);
    let merged = std::fs::read(t.path().join("m.hll")).unwrap();
    let union = std::fs::read(t.path().join("ab.hll")).unwrap();
    assert_eq!(merged, union);
}

#[test]
fn merge_of_different_salts_is_refused() {
    let t = TempDir::new().unwrap();
    ok(
        t.path(),
        &["sketch", "new", "--salted", "--seed", "1", "--out", "a.hll"],
    );
    ok(
        t.path(),
        &["sketch", "new", "--salted", "--seed", "2", "--out", "b.hll"],
    );
    let out = hllguard(t.path(), &["sketch", "merge", "a.hll", "b.hll", "--out", "m.hll"]);
    assert_eq!(code(&out), 4);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("salt 0x"), "{err}");
    assert!(!t.path().join("m.hll").exists());
}

#[test]
fn corrupt_sketch_is_a_format_error() {
    let t = TempDir::new().unwrap();
    std::fs::write(t.path().join("bad.hll"), b"not a sketch at all").unwrap();
    assert_eq!(code(&hllguard(t.path(), &["sketch", "info", "bad.hll"])), 3);

    ok(t.path(), &["sketch", "new", "-b", "8", "--out", "a.hll"]);
    let mut bytes = std::fs::read(t.path().join("a.hll")).unwrap();
    bytes.pop();
    std::fs::write(t.path().join("short.hll"), bytes).unwrap();
    assert_eq!(code(&hllguard(t.path(), &["sketch", "estimate", "short.hll"])), 3);
}

#[test]
fn usage_errors() {
    let t = TempDir::new().unwrap();
    let out = hllguard(
        t.path(),
        &["attack", "filter-m2", "--candidates", "100", "--rounds", "0"],
    );
    assert_eq!(code(&out), 2);
    assert_eq!(
        code(&hllguard(t.path(), &["sketch", "new", "-b", "3", "--out", "x"])),
        2
    );
    assert_eq!(code(&hllguard(t.path(), &["sketch", "frobnicate"])), 2);
    assert_eq!(code(&hllguard(t.path(), &["experiment", "fig4", "--trials", "99"])), 2);
    assert_eq!(code(&hllguard(t.path(), &["sketch", "info", "missing.hll"])), 1);
}

#[test]
fn craft_m1_writes_rank_one_set() {
    let t = TempDir::new().unwrap();
    let stats = json(
        t.path(),
        &["attack", "craft-m1", "--count", "100000", "-b", "10", "--out", "m1.txt"],
    );
    assert_eq!(stats["count"], 100_000);
    assert_eq!(stats["matching_fraction"], 1.0);
    assert!(stats["estimate"].as_f64().unwrap() <= 3072.0);
    let text = std::fs::read_to_string(t.path().join("m1.txt")).unwrap();
    let mut lines = text.lines();
    let header: Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(header["count"], 100_000);
    assert_eq!(header["model"], "m1");
    assert_eq!(lines.count(), 100_000);
}

#[test]
fn craft_inflation_reports_ranks() {
    let t = TempDir::new().unwrap();
    let stats = json(
        t.path(),
        &[
            "attack",
            "craft-inflation",
            "--min-rank",
            "8",
            "--budget",
            "20000",
            "-b",
            "10",
            "--out",
            "inf.txt",
        ],
    );
    assert_eq!(stats["matching_fraction"], 1.0);
    assert_eq!(stats["model"], "inflation");
    let n = stats["count"].as_u64().unwrap();
    // P(rank >= 8) = 2^-7
    assert!((100..=220).contains(&n), "{n}");
}

#[test]
fn filter_m2_reports_rounds_and_budget() {
    let t = TempDir::new().unwrap();
    let stats = json(
        t.path(),
        &[
            "attack",
            "filter-m2",
            "--candidates",
            "20000",
            "--rounds",
            "2",
            "-b",
            "10",
            "--out",
            "m2.txt",
        ],
    );
    let rounds = stats["rounds"].as_array().unwrap();
    assert_eq!(rounds.len(), 2);
    assert_eq!(rounds[0]["input"], 20_000);
    assert_eq!(rounds[1]["input"], rounds[0]["retained"]);
    assert_eq!(stats["retained"], rounds[1]["retained"]);
    let calls = stats["budget"]["insert_calls"].as_u64().unwrap();
    assert_eq!(calls, 20_000 + rounds[0]["retained"].as_u64().unwrap());
    assert!(stats["ratio"].as_f64().unwrap() < 1.0);
}

#[test]
fn sns_flags_m1_stream_and_blocks_merge() {
    let t = TempDir::new().unwrap();
    ok(
        t.path(),
        &["attack", "craft-m1", "--count", "100000", "-b", "10", "--out", "m1.txt"],
    );
    ok(
        t.path(),
        &["sns", "new", "--dt", "0.23", "--seed", "3", "--out", "bad.sns"],
    );
    ok(
        t.path(),
        &["sns", "new", "--dt", "0.23", "--seed", "4", "--out", "good.sns"],
    );
    ok(t.path(), &["sns", "insert", "bad.sns", "--input", "m1.txt"]);
    ok(t.path(), &["sns", "insert", "good.sns", "--generate", "50000"]);

    let out = hllguard(t.path(), &["sns", "check", "bad.sns"]);
    assert_eq!(code(&out), 5);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["verdict"]["attacked"], true);
    assert!(v["verdict"]["normalized_diff"].as_f64().unwrap() < -0.23);

    let v = json(t.path(), &["sns", "check", "good.sns"]);
    assert_eq!(v["verdict"]["attacked"], false);
    assert_eq!(v["verdict"]["indeterminate"], false);

    let out = hllguard(t.path(), &["sns", "merge", "good.sns", "bad.sns", "--out", "m.sns"]);
    assert_eq!(code(&out), 5);
}

#[test]
fn sns_merge_of_clean_nodes() {
    let t = TempDir::new().unwrap();
    ok(t.path(), &["sns", "new", "--seed", "1", "--out", "a.sns"]);
    ok(t.path(), &["sns", "new", "--seed", "2", "--out", "b.sns"]);
    ok(
        t.path(),
        &["sns", "insert", "a.sns", "--generate", "30000", "--seed", "5"],
    );
    ok(
        t.path(),
        &["sns", "insert", "b.sns", "--generate", "30000", "--seed", "6"],
    );
    let r = json(t.path(), &["sns", "merge", "a.sns", "b.sns", "--out", "m.hll"]);
    assert_eq!(r["protected"], false);
    let est = r["estimate"].as_f64().unwrap();
    assert!((est - 60_000.0).abs() < 0.2 * 60_000.0, "{est}");
    // the output is the merged unsalted sketch
    let info = json(t.path(), &["sketch", "info", "m.hll"]);
    assert_eq!(info["salted"], false);
}

#[test]
fn fig4_is_deterministic_and_writes_histogram() {
    let t = TempDir::new().unwrap();
    let args = |out: &'static str| {
        [
            "experiment",
            "fig4",
            "--trials",
            "100",
            "--cardinality",
            "20000",
            "--seed",
            "9",
            "--out",
            out,
        ]
    };
    let a = ok(t.path(), &args("a.csv"));
    let b = ok(t.path(), &args("b.csv"));
    assert_eq!(a, b);
    let csv_a = std::fs::read_to_string(t.path().join("a.csv")).unwrap();
    assert_eq!(csv_a, std::fs::read_to_string(t.path().join("b.csv")).unwrap());
    assert_eq!(csv_a.lines().count(), 51);

    let summary: Value = serde_json::from_str(&a).unwrap();
    assert_eq!(summary["config"]["trials"], 100);
    let sigma = summary["summary"]["sigma"].as_f64().unwrap();
    assert!((sigma - 0.045962).abs() < 1e-5);
}

#[test]
fn detect_with_empty_attack_file_warns() {
    let t = TempDir::new().unwrap();
    std::fs::write(t.path().join("empty.txt"), "").unwrap();
    let out = hllguard(
        t.path(),
        &[
            "experiment",
            "detect",
            "--attack",
            "empty.txt",
            "--trials",
            "5",
            "--control-trials",
            "0",
        ],
    );
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("floor"));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["summary"]["below_floor"], true);
    assert!(r["summary"]["detection_rate"].is_null());
}

#[test]
fn detect_generated_m1_set() {
    let t = TempDir::new().unwrap();
    let r = json(
        t.path(),
        &[
            "experiment",
            "detect",
            "--m1-count",
            "20000",
            "--trials",
            "20",
            "--control-trials",
            "20",
        ],
    );
    assert_eq!(r["summary"]["attack_size"], 20_000);
    assert_eq!(r["summary"]["detection_rate"], 1.0);
    assert_eq!(r["summary"]["false_positive_rate"], 0.0);
}

#[test]
fn experiment_m2_writes_attack_set() {
    let t = TempDir::new().unwrap();
    let r = json(
        t.path(),
        &[
            "experiment",
            "m2",
            "--candidates",
            "30000",
            "-b",
            "10",
            "--out",
            "set.txt",
        ],
    );
    let retained = r["summary"]["retained"].as_u64().unwrap();
    let text = std::fs::read_to_string(t.path().join("set.txt")).unwrap();
    assert_eq!(text.lines().count() as u64, retained + 1);
    assert_eq!(r["records"].as_array().unwrap().len(), 3);
}
