use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use scpnum_cli::scenario::{ScenarioDoc, BUILT_IN};

fn scpnum(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scpnum"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("SCPNUM_SEED")
        .output()
        .unwrap()
}

fn field<'a>(report: &'a str, key: &str) -> &'a str {
    report
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(": ")))
        .unwrap_or_else(|| panic!("no `{key}` in\n{report}"))
}

fn write_doc(dir: &Path, name: &str, json: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, json).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn lists_built_ins_and_prints_round_trippable_documents() {
    let out = Command::new(env!("CARGO_BIN_EXE_scpnum"))
        .arg("scenarios")
        .output()
        .unwrap();
    assert!(out.status.success());
    let listed: Vec<String> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    assert_eq!(listed, BUILT_IN);
    for name in BUILT_IN {
        let out = Command::new(env!("CARGO_BIN_EXE_scpnum"))
            .args(["scenarios", "--show", name])
            .output()
            .unwrap();
        let doc = ScenarioDoc::from_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
        assert_eq!(doc, ScenarioDoc::built_in(name).unwrap());
    }
}

#[test]
fn engine_run_writes_trace_with_one_row_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let out = scpnum(&["run", "paper-scenario-1"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let result = fs::read_to_string(dir.path().join("result.txt")).unwrap();
    assert_eq!(field(&result, "converged"), "true");
    let iterations: usize = field(&result, "iterations").parse().unwrap();
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let mut rows = trace.lines();
    assert_eq!(
        rows.next().unwrap(),
        "t,x_1,x_2,x_3,x_4,x_5,mu_1,stopping_metric,g_1,ghat_1"
    );
    let body: Vec<&str> = rows.collect();
    assert_eq!(body.len(), iterations + 1);
    assert!(body[0].starts_with("0,"));
    // Full precision: every value parses back to the exact float written.
    let x1: f64 = body[1].split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(format!("{x1:.16e}"), body[1].split(',').nth(1).unwrap());
}

#[test]
fn single_source_with_room_ends_at_its_maximum() {
    let dir = tempfile::tempdir().unwrap();
    let file = write_doc(
        dir.path(),
        "roomy.json",
        r#"{"links": [{"id": 1, "capacity_kbps": 300}],
            "sources": [{"id": 1, "r_kbps": 256, "c1": 6, "c2": 2, "route": [1]}]}"#,
    );
    let out = scpnum(&["run", &file, "--mode", "engine"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let last = trace.lines().last().unwrap();
    let x: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(x, 256.0);
    let result = fs::read_to_string(dir.path().join("result.txt")).unwrap();
    assert_eq!(field(&result, "scenario"), "roomy");
}

#[test]
fn both_modes_agree_and_log_messages() {
    let dir = tempfile::tempdir().unwrap();
    let out = scpnum(&["run", "chain-3", "--mode", "both"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let eq = fs::read_to_string(dir.path().join("equivalence.txt")).unwrap();
    assert_eq!(field(&eq, "verdict"), "equivalent");
    assert_eq!(field(&eq, "messages_per_round_expected"), "12");
    let log = fs::read_to_string(dir.path().join("messages.csv")).unwrap();
    let total: usize = field(&eq, "messages_total").parse().unwrap();
    assert_eq!(log.lines().count(), total + 1);
    assert!(dir.path().join("trace_agents.csv").is_file());
}

#[test]
fn agents_mode_alone_writes_its_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = scpnum(&["run", "paper-scenario-1", "--mode", "agents"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let result = fs::read_to_string(dir.path().join("result.txt")).unwrap();
    assert_eq!(field(&result, "mode"), "agents");
    assert!(!dir.path().join("equivalence.txt").exists());
}

#[test]
fn invalid_scenarios_exit_with_located_errors() {
    let dir = tempfile::tempdir().unwrap();
    let file = write_doc(
        dir.path(),
        "bad.json",
        r#"{"links": [{"id": 1, "capacity_kbps": 300}],
            "sources": [{"id": 1, "r_kbps": 256, "c1": 6, "c2": 2, "route": [4]}]}"#,
    );
    let out = scpnum(&["run", &file], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sources[0].route[0]"));

    let file = write_doc(dir.path(), "broken.json", "{\"links\": [\n  {\"id\": 1,}\n]}");
    let out = scpnum(&["run", &file], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let out = scpnum(&["run", "nonexistent-scenario"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unconverged_run_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let file = write_doc(
        dir.path(),
        "short.json",
        r#"{"links": [{"id": 1, "capacity_kbps": 1000}],
            "sources": [{"id": 1, "r_kbps": 256, "c1": 6, "c2": 2, "route": [1]},
                        {"id": 2, "r_kbps": 256, "c1": 6, "c2": 8, "route": [1]},
                        {"id": 3, "r_kbps": 256, "c1": 6, "c2": 4, "route": [1]},
                        {"id": 4, "r_kbps": 256, "c1": 6, "c2": 6, "route": [1]},
                        {"id": 5, "r_kbps": 256, "c1": 6, "c2": 10, "route": [1]}],
            "solver": {"max_iter": 2}}"#,
    );
    let out = scpnum(&["run", &file], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let result = fs::read_to_string(dir.path().join("result.txt")).unwrap();
    assert_eq!(field(&result, "converged"), "false");
    assert_eq!(
        fs::read_to_string(dir.path().join("trace.csv"))
            .unwrap()
            .lines()
            .count(),
        4
    );
}

#[test]
fn validate_single_source_finds_the_capacity() {
    let dir = tempfile::tempdir().unwrap();
    let out = scpnum(&["validate", "single-source"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report = fs::read_to_string(dir.path().join("validation.txt")).unwrap();
    let line = field(&report, "source[1]");
    let nums: Vec<f64> = line.split_whitespace().filter_map(|w| w.parse().ok()).collect();
    let (engine, oracle, step) = (nums[0], nums[1], nums[2]);
    assert!((engine - 100.0).abs() <= 0.5, "{line}");
    assert!(oracle <= 100.0 + 1e-6 && 100.0 - oracle <= step, "{line}");
}

#[test]
fn validate_rejects_large_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let sources: Vec<String> = (1..=8)
        .map(|id| format!(r#"{{"id": {id}, "r_kbps": 256, "c1": 6, "c2": 4, "route": [1]}}"#))
        .collect();
    let json = format!(
        r#"{{"links": [{{"id": 1, "capacity_kbps": 1500}}], "sources": [{}]}}"#,
        sources.join(",")
    );
    let file = write_doc(dir.path(), "eight.json", &json);
    let out = scpnum(&["validate", &file], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("8 sources") && err.contains("budget"), "{err}");
}

#[test]
fn seed_override_is_honoured_and_checked() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: &str| {
        Command::new(env!("CARGO_BIN_EXE_scpnum"))
            .args(["validate", "single-source", "--out"])
            .arg(dir.path())
            .env("SCPNUM_SEED", seed)
            .output()
            .unwrap()
    };
    assert_eq!(run("42").status.code(), Some(0));
    let report = fs::read_to_string(dir.path().join("validation.txt")).unwrap();
    assert!(report.contains("local_opt_test (seed 42)"));
    assert_eq!(run("forty-two").status.code(), Some(2));
}
