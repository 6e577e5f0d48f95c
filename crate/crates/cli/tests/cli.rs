use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn crowdlearn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crowdlearn")).args(args).output().expect("the binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON object")
}

const COMPRESSION: &str = r#"
rounds = 3
seed = 11
ledger_path = "out/ledger.jsonl"
report_path = "out/report.jsonl"
[market]
kind = "compression"
n = 2
data = { source = "inline", values = [0, 1, 1, 1] }
[[agents]]
id = "alice"
strategy = "informed"
belief = { kind = "truth" }
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("market.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn simulate_writes_files_next_to_the_config_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), COMPRESSION);
    let summary = stdout_json(&crowdlearn(&["simulate", "--config", &config]));
    let loss = summary["summary"]["mechanism_loss"].as_f64().unwrap();
    assert!((loss - 0.130812).abs() < 1e-6);
    let ledger = dir.path().join("out/ledger.jsonl");
    assert!(ledger.exists() && dir.path().join("out/report.jsonl").exists());

    let verdict = stdout_json(&crowdlearn(&["replay", "--ledger", ledger.to_str().unwrap()]));
    assert_eq!(verdict["trades"], 1);
    assert_eq!(verdict["settled"], true);
}

#[test]
fn replay_exits_with_one_on_an_edited_cost() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), COMPRESSION);
    assert!(crowdlearn(&["simulate", "--config", &config]).status.success());
    let path = dir.path().join("out/ledger.jsonl");
    let text = std::fs::read_to_string(&path).unwrap();
    let edited: String = text
        .lines()
        .map(|l| {
            if l.contains("\"type\":\"trade\"") {
                let mut v: Value = serde_json::from_str(l).unwrap();
                let cost = v["cost"].as_f64().unwrap();
                v["cost"] = Value::from(cost + 1e-6);
                v.to_string()
            } else {
                l.to_owned()
            }
        })
        .map(|l| l + "\n")
        .collect();
    std::fs::write(&path, edited).unwrap();
    let out = crowdlearn(&["replay", "--ledger", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at seq 0"));
}

#[test]
fn replay_of_a_truncated_file_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), COMPRESSION);
    assert!(crowdlearn(&["simulate", "--config", &config]).status.success());
    let path = dir.path().join("out/ledger.jsonl");
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, &text[..text.trim_end().len() - 3]).unwrap();
    let out = crowdlearn(&["replay", "--ledger", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn settle_closes_an_open_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), COMPRESSION);
    assert!(crowdlearn(&["simulate", "--config", &config]).status.success());
    let path = dir.path().join("out/ledger.jsonl");
    // Drop the settlement line to reopen the ledger.
    let text = std::fs::read_to_string(&path).unwrap();
    let open: String = text.lines().filter(|l| !l.contains("\"type\":\"settlement\"")).map(|l| format!("{l}\n")).collect();
    std::fs::write(&path, open).unwrap();

    let settled = dir.path().join("settled.jsonl");
    let out = stdout_json(&crowdlearn(&[
        "settle",
        "--ledger",
        path.to_str().unwrap(),
        "--outcome",
        "1",
        "--out",
        settled.to_str().unwrap(),
    ]));
    // Moving from (1/2, 1/2) to (1/4, 3/4) pays ln(3/4 / 1/2) on outcome 1
    // after a cost of ln 2.
    let paid = out["payouts"]["alice"].as_f64().unwrap();
    assert!((paid - 1.5f64.ln() - 2f64.ln()).abs() < 1e-12, "{paid}");
    assert!(stdout_json(&crowdlearn(&["replay", "--ledger", settled.to_str().unwrap()]))["settled"] == true);

    let again = crowdlearn(&["settle", "--ledger", settled.to_str().unwrap(), "--outcome", "0"]);
    assert_eq!(again.status.code(), Some(2));
}

#[test]
fn worst_case_reports_half_alpha_for_regression() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"
        rounds = 1
        seed = 1
        [market]
        kind = "regression"
        d = 2
        alpha = 1.0
        data = { source = "synthetic", points = 10, noise = 0.0 }
        "#,
    );
    let out = stdout_json(&crowdlearn(&["worst-case", "--config", &config]));
    let loss = out["worst_case_loss"].as_f64().unwrap();
    assert!(loss <= 0.5 + 1e-9 && loss >= 0.5 - 1e-3, "{loss}");
}

#[test]
fn quote_prices_a_compression_bid() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), COMPRESSION);
    let out = stdout_json(&crowdlearn(&["quote", "--config", &config, "--bid", "0.75,0.25"]));
    assert!((out["max_payout"].as_f64().unwrap() - 3f64.ln()).abs() < 1e-12);
    assert!(out["min_payout"].as_f64().unwrap().abs() < 1e-12);
    assert_eq!(out["escrow_ok"], true);

    let outside = crowdlearn(&["quote", "--config", &config, "--bid", "0.9,0.9"]);
    assert_eq!(outside.status.code(), Some(2));
}

#[test]
fn usage_and_config_errors_exit_with_two() {
    assert_eq!(crowdlearn(&["simulate"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &COMPRESSION.replace("rounds = 3", "rounds = 3\nspeed = 1"));
    let out = crowdlearn(&["simulate", "--config", &config]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("speed"));
    let missing = crowdlearn(&["replay", "--ledger", "/nonexistent/ledger.jsonl"]);
    assert_eq!(missing.status.code(), Some(2));
}
