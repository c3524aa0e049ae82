use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures")).join(name)
}

fn spanqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spanqa"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = spanqa(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?}\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn build(dir: &Path, extra: &[&str]) -> (PathBuf, Value) {
    let out = dir.join("data.jsonl");
    let corpus = fixture("mini_corpus.jsonl");
    let mut args = vec!["--no-timestamp", "build", "--corpus", s(&corpus), "--out", s(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    let stats = json(&dir.join("data.jsonl.stats.json"));
    (out, stats)
}

#[test]
fn help_lists_commands_and_flags() {
    let out = ok(&["--help"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for word in [
        "validate",
        "build",
        "split",
        "filter",
        "run",
        "gradcheck",
        "export-squad",
        "toy-train",
        "--config",
        "--seed",
        "--threads",
        "--no-timestamp",
    ] {
        assert!(text.contains(word), "help lacks {word}");
    }
    let build = String::from_utf8(ok(&["build", "--help"]).stdout).unwrap();
    assert!(build.contains("--omega") && build.contains("--mode"));
}

#[test]
fn validate_exit_codes() {
    let dir = TempDir::new().unwrap();
    let good = ok(&["validate", "--corpus", s(&fixture("mini_corpus.jsonl"))]);
    let report = stdout_json(&good);
    assert_eq!(report["valid"], 50);
    assert_eq!(report["all_valid"], true);
    assert!(report["generated_at_unix"].is_u64());

    let mut lines: Vec<String> = fs::read_to_string(fixture("mini_corpus.jsonl"))
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    lines[3] = lines[3].replacen("(S ", "(S (", 1);
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, lines.join("\n")).unwrap();
    let out = spanqa(&["validate", "--corpus", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    let report = stdout_json(&out);
    assert_eq!(
        (report["valid"].as_u64(), report["invalid"].as_u64()),
        (Some(49), Some(1))
    );

    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = ok(&["validate", "--corpus", s(&empty)]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("zero sentences"));
    assert_eq!(stdout_json(&out)["records"], 0);
}

#[test]
fn build_reports_statistics() {
    let dir = TempDir::new().unwrap();
    let (data, stats) = build(dir.path(), &[]);
    assert_eq!(stats["instances"], 62);
    assert_eq!(stats["type_distribution"]["counts"]["VP"], 15);
    assert_eq!(stats["type_distribution"]["counts"]["NE"], 19);
    assert_eq!(stats["length_histogram"]["bins"][0]["count"], 40);
    assert_eq!(stats["provenance"]["omega_percent"], 80.0);
    assert!(stats.get("generated_at_unix").is_none());
    assert_eq!(fs::read_to_string(data).unwrap().lines().count(), 62);

    let (_, ne) = build(dir.path(), &["--mode", "ne-only"]);
    assert_eq!(ne["type_distribution"]["frequencies"]["NE"], 1.0);

    let (_, narrow) = build(dir.path(), &["--omega", "40"]);
    assert_eq!(narrow["provenance"]["omega_percent"], 40.0);

    // Same statistics again from the dataset file.
    let (data, built) = build(dir.path(), &[]);
    let stats = stdout_json(&ok(&["--no-timestamp", "stats", "--dataset", s(&data)]));
    assert_eq!(stats["type_distribution"], built["type_distribution"]);
    assert_eq!(stats["length_histogram"], built["length_histogram"]);
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 9\n[extension]\nomega_percent = 60.0\n").unwrap();
    let (_, stats) = build(dir.path(), &["--config", s(&cfg)]);
    assert_eq!(stats["provenance"]["seed"], 9);
    assert_eq!(stats["provenance"]["omega_percent"], 60.0);
    let (_, stats) = build(dir.path(), &["--config", s(&cfg), "--seed", "3", "--omega", "70"]);
    assert_eq!(stats["provenance"]["seed"], 3);
    assert_eq!(stats["provenance"]["omega_percent"], 70.0);

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[extension]\nomgea = 60.0\n").unwrap();
    assert_eq!(spanqa(&["--config", s(&bad), "gradcheck"]).status.code(), Some(2));
    fs::write(&bad, "[filter]\ngamma_sub = 1.5\n").unwrap();
    assert_eq!(spanqa(&["--config", s(&bad), "gradcheck"]).status.code(), Some(2));
}

#[test]
fn usage_and_runtime_errors() {
    assert_eq!(spanqa(&["build", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(spanqa(&["frobnicate"]).status.code(), Some(2));
    // Nothing says where the corpus is.
    assert_eq!(spanqa(&["build"]).status.code(), Some(2));
    let out = spanqa(&["stats", "--dataset", "/definitely/not/here.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn outputs_are_byte_identical_without_timestamps() {
    // Same paths both times, since the statistics record them.
    let dir = TempDir::new().unwrap();
    let files = ["data.jsonl", "data.jsonl.stats.json"];
    build(dir.path(), &["--mode", "random", "--threads", "1"]);
    let first: Vec<String> = files
        .iter()
        .map(|f| fs::read_to_string(dir.path().join(f)).unwrap())
        .collect();
    build(dir.path(), &["--mode", "random", "--threads", "4"]);
    for (f, before) in files.iter().zip(&first) {
        assert!(
            fs::read_to_string(dir.path().join(f)).unwrap() == *before,
            "{f} differs"
        );
    }
}

#[test]
fn split_sizes() {
    let dir = TempDir::new().unwrap();
    let (data, _) = build(dir.path(), &[]);
    let ten: Vec<String> = fs::read_to_string(&data)
        .unwrap()
        .lines()
        .take(10)
        .map(String::from)
        .collect();
    let small = dir.path().join("ten.jsonl");
    fs::write(&small, ten.join("\n") + "\n").unwrap();
    let out_dir = dir.path().join("split");
    ok(&[
        "--no-timestamp",
        "split",
        "--dataset",
        s(&small),
        "--out-dir",
        s(&out_dir),
        "--initial-size",
        "3",
        "--parts",
        "3",
    ]);
    let report = json(&out_dir.join("split_report.json"));
    assert_eq!(report["initial"], 3);
    assert_eq!(report["parts"], serde_json::json!([3, 2, 2]));
    for (f, n) in [
        ("initial.jsonl", 3),
        ("part-1.jsonl", 3),
        ("part-2.jsonl", 2),
        ("part-3.jsonl", 2),
    ] {
        assert_eq!(fs::read_to_string(out_dir.join(f)).unwrap().lines().count(), n, "{f}");
    }
    let too_big = spanqa(&[
        "split",
        "--dataset",
        s(&small),
        "--out-dir",
        s(&out_dir),
        "--initial-size",
        "11",
    ]);
    assert_eq!(too_big.status.code(), Some(2));
}

#[test]
fn filter_writes_decisions() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("f");
    ok(&[
        "--no-timestamp",
        "filter",
        "--part",
        s(&fixture("filter_part.jsonl")),
        "--predictions",
        s(&fixture("filter_predictions.jsonl")),
        "--out-dir",
        s(&out_dir),
    ]);
    let report = json(&out_dir.join("filter_report.json"));
    assert_eq!(report["kept_top_k"], 29);
    assert_eq!(report["kept_substring"], 57);
    assert_eq!(report["rejected"], 109);
    assert_eq!(report["missing"], 5);
    assert_eq!(report["kept"], 86);
    let decisions = fs::read_to_string(out_dir.join("decisions.jsonl")).unwrap();
    assert_eq!(decisions.lines().count(), 200);
    let first: Value = serde_json::from_str(decisions.lines().next().unwrap()).unwrap();
    assert_eq!(first["instance_id"], "f000");
    assert_eq!(first["reason"], "SUBSTRING");
    assert_eq!(
        fs::read_to_string(out_dir.join("kept.jsonl")).unwrap().lines().count(),
        86
    );

    let strict = dir.path().join("g");
    ok(&[
        "filter",
        "--part",
        s(&fixture("filter_part.jsonl")),
        "--predictions",
        s(&fixture("filter_predictions.jsonl")),
        "--out-dir",
        s(&strict),
        "--gamma-sub",
        "1.0",
    ]);
    assert_eq!(json(&strict.join("filter_report.json"))["kept_substring"], 0);
}

#[test]
fn gradcheck_exit_codes() {
    let out = ok(&["gradcheck"]);
    assert!(stdout_json(&out)["max_rel_err"].as_f64().unwrap() < 1e-4);
    assert_eq!(spanqa(&["gradcheck", "--tolerance", "1e-12"]).status.code(), Some(3));
}

#[test]
fn export_without_meta() {
    let dir = TempDir::new().unwrap();
    let (data, _) = build(dir.path(), &[]);
    let plain = dir.path().join("plain.jsonl");
    ok(&["export-squad", "--dataset", s(&data), "--out", s(&plain)]);
    let text = fs::read_to_string(&plain).unwrap();
    assert_eq!(text.lines().count(), 62);
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert!(v.get("meta").is_none());
        assert!(v["answers"][0]["answer_start"].is_u64());
    }
}

#[test]
fn run_with_the_toy_adapter() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        ok(&[
            "--no-timestamp",
            "run",
            "--dataset",
            s(&fixture("filter_part.jsonl")),
            "--out-dir",
            s(&out_dir),
            "--initial-size",
            "80",
            "--parts",
            "6",
        ]);
        out_dir
    };
    let a = run("a");
    let report = json(&a.join("run_report.json"));
    let rounds = report["rounds"].as_array().unwrap();
    assert_eq!(rounds.len(), 6);
    assert_eq!(report["adapter"], "toy");
    for (i, r) in rounds.iter().enumerate() {
        let n = i + 1;
        let kept = r["kept_top_k"].as_u64().unwrap() + r["kept_substring"].as_u64().unwrap();
        let total = kept + r["rejected"].as_u64().unwrap() + r["missing"].as_u64().unwrap();
        assert_eq!(total, r["part_size"].as_u64().unwrap());
        let kept_file = fs::read_to_string(a.join(format!("rounds/round-{n}.kept.jsonl"))).unwrap();
        assert_eq!(kept_file.lines().count() as u64, kept);
        assert!(a.join(format!("predictions/round-{n}.jsonl")).exists());
        assert!(a.join(format!("checkpoints/round-{n}.json")).exists());
    }
    let b = run("b");
    // Checkpoint paths differ between the two directories; nothing else may.
    let strip = |v: &Value| -> Vec<Value> {
        v["rounds"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.as_object_mut().unwrap().remove("checkpoint");
                r
            })
            .collect()
    };
    assert_eq!(strip(&json(&b.join("run_report.json"))), strip(&report));
    assert_eq!(
        fs::read(a.join("rounds/round-6.kept.jsonl")).unwrap(),
        fs::read(b.join("rounds/round-6.kept.jsonl")).unwrap()
    );
}

#[test]
fn toy_train_writes_a_trace() {
    let dir = TempDir::new().unwrap();
    let trace = dir.path().join("trace.csv");
    let out = ok(&["--no-timestamp", "toy-train", "--steps", "20", "--trace", s(&trace)]);
    let report = stdout_json(&out);
    assert_eq!(report["steps"], 20);
    assert!(report["final_total"].as_f64().unwrap() < report["initial_total"].as_f64().unwrap());
    let csv = fs::read_to_string(&trace).unwrap();
    assert!(csv.starts_with("step,"));
    assert!(csv.lines().count() >= 21);
}
