mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::*;

fn reqfusion(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_reqfusion"));
    cmd.args(args)
        .env_remove("REQFUSION_CONFIG")
        .env_remove("REQFUSION_STORE")
        .env_remove("REQFUSION_TOKEN");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn extract_tender(store: &Path) -> Output {
    let config = fixture("tender_01/config.toml");
    let input = fixture("tender_01.md");
    run(&mut reqfusion(&[
        "--config",
        path(&config),
        "--store",
        path(store),
        "extract",
        path(&input),
    ]))
}

#[test]
fn dataset_a_reports_type_split() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture("dataset_a/config.toml");
    let input = fixture("dataset_a/corpus.md");
    let out = run(&mut reqfusion(&["extract", path(&input)])
        .env("REQFUSION_CONFIG", &config)
        .env("REQFUSION_STORE", dir.path()));
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("54.9% / 45.1%"), "{text}");
    assert!(
        text.contains("functional 124 / non-functional 102"),
        "{text}"
    );
}

#[test]
fn extract_review_trace_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let out = extract_tender(&store);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("run-0001 "));
    assert!(stdout(&out).contains("flagged for review: 3"));

    let runs = run(&mut reqfusion(&["--store", path(&store), "runs"]));
    assert!(stdout(&runs).contains("run-0001"));
    assert!(stdout(&runs).contains("tender_01"));

    let list = run(&mut reqfusion(&["--store", path(&store), "review", "list"]));
    assert!(list.status.success(), "{}", stderr(&list));
    let pending: Vec<String> = stdout(&list)
        .lines()
        .map(|l| l.split_whitespace().next().unwrap().to_string())
        .collect();
    assert_eq!(pending.len(), 3);

    let decide = run(&mut reqfusion(&[
        "--store",
        path(&store),
        "review",
        "decide",
        &pending[0],
        "accept",
        "--reviewer",
        "alice",
    ]));
    assert!(decide.status.success(), "{}", stderr(&decide));
    assert!(stdout(&decide).contains("pending_review -> accepted"));
    let again = run(&mut reqfusion(&[
        "--store",
        path(&store),
        "review",
        "decide",
        &pending[0],
        "reject",
    ]));
    assert_eq!(again.status.code(), Some(1));
    assert!(stderr(&again).contains("cannot be decided"));

    let accepted = run(&mut reqfusion(&[
        "--store",
        path(&store),
        "review",
        "list",
        "--state",
        "accepted",
    ]));
    assert_eq!(stdout(&accepted).lines().count(), 1);

    let trace = run(&mut reqfusion(&[
        "--store",
        path(&store),
        "trace",
        &pending[0],
    ]));
    assert!(trace.status.success(), "{}", stderr(&trace));
    assert!(stdout(&trace).contains("page"));

    let export = run(&mut reqfusion(&[
        "--store",
        path(&store),
        "export",
        "run-0001",
    ]));
    assert!(export.status.success());
    assert_eq!(stdout(&export).lines().count(), 19);

    let csv_path = dir.path().join("out.csv");
    let csv = run(&mut reqfusion(&[
        "--store",
        path(&store),
        "export",
        "run-0001",
        "--format",
        "csv",
        "--out",
        path(&csv_path),
    ]));
    assert!(csv.status.success());
    let csv_text = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(csv_text.lines().count(), 20);

    let missing = run(&mut reqfusion(&[
        "--store",
        path(&store),
        "export",
        "run-0042",
    ]));
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn eval_writes_scores_and_cost_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    assert!(extract_tender(&store).status.success());
    let report = dir.path().join("report.json");
    let gt = fixture("tender_01/ground_truth.jsonl");
    let out = run(&mut reqfusion(&[
        "--store",
        path(&store),
        "eval",
        "run-0001",
        "--ground-truth",
        path(&gt),
        "--report",
        path(&report),
    ]));
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("$4.9187"), "{}", stdout(&out));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["evaluation"]["overall"]["tp"], 20);
    assert_eq!(json["evaluation"]["overall"]["fp"], 1);
    assert!(json["cost_time"]["engine_total_usd"].as_f64().unwrap() > 0.0);
}

#[test]
fn simulate_calibrates_to_target() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("sim.json");
    let out = run(&mut reqfusion(&[
        "simulate",
        "--calibrate",
        "0.08",
        "--trials",
        "2000",
        "--report",
        path(&report),
    ]));
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("calibrated overlap rate: 0.03"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let confirmed = json["confirmed_fp_rate"]["mean"].as_f64().unwrap();
    assert!((confirmed - 0.08).abs() < 0.02, "{confirmed}");

    let bad = run(&mut reqfusion(&["simulate", "--fp-rate", "1.5"]));
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn invalid_threshold_exits_with_failure() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture("tender_01/config.toml");
    let input = fixture("tender_01.md");
    let out = run(&mut reqfusion(&[
        "--config",
        path(&config),
        "--store",
        path(dir.path()),
        "extract",
        "--flag-threshold",
        "1.5",
        path(&input),
    ]));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("invalid config"), "{}", stderr(&out));
}

#[test]
fn all_failing_providers_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let failing = r#"[{"status": 500, "body": ""}]"#;
    let config = write_config(
        dir.path(),
        "",
        &[("a", failing), ("b", failing), ("c", failing)],
    );
    let input = dir.path().join("doc.md");
    std::fs::write(&input, "# Scope\n\nThe portal shall work.\n").unwrap();
    let store = dir.path().join("store");
    let out = run(&mut reqfusion(&[
        "--config",
        path(&config),
        "--store",
        path(&store),
        "extract",
        path(&input),
    ]));
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("every provider failed"));

    let runs = run(&mut reqfusion(&["--store", path(&store), "runs"]));
    assert!(runs.status.success());
    assert_eq!(stdout(&runs), "");
}

#[test]
fn missing_store_and_config_are_usage_errors() {
    let out = run(&mut reqfusion(&["runs"]));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("no store given"));
    let out = run(&mut reqfusion(&["extract", "x.md"]));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("no configuration given"));
    let dir = tempfile::tempdir().unwrap();
    let out = run(&mut reqfusion(&[
        "--store",
        path(&dir.path().join("absent")),
        "runs",
    ]));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("store not found"));
}

#[test]
fn serve_refuses_to_start_without_token() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "", &[("a", "[]")]);
    let out = run(&mut reqfusion(&[
        "--config",
        path(&config),
        "--store",
        path(dir.path()),
        "serve",
        "--addr",
        "127.0.0.1:0",
    ]));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("bearer token"));
}

#[test]
fn calibrate_weights_prints_table_and_toml() {
    let config = fixture("tender_01/config.toml");
    let gt = fixture("tender_01/ground_truth.jsonl");
    let input = fixture("tender_01.md");
    let out = run(&mut reqfusion(&[
        "--config",
        path(&config),
        "calibrate-weights",
        "--ground-truth",
        path(&gt),
        path(&input),
    ]));
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    for id in ["gpt4", "claude", "groq"] {
        assert!(text.contains(&format!("provider_id = \"{id}\"")), "{text}");
    }
    assert_eq!(text.matches("[[providers]]").count(), 3);
}
