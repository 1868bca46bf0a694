use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use supercoop::mock::{MockOptions, MockServer};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_supercoop"));
    c.env_remove("SUPERCOOP_ENDPOINT")
        .env_remove("SUPERCOOP_MODEL");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn pairing_lines(o: &Output) -> Vec<String> {
    stdout(o)
        .lines()
        .take_while(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, body).unwrap();
    path
}

const ALL_A: &str = r#"
condition = "ri"
trials = 2
[conditions.ri]
max_rounds = 5
budget = 14
[[players]]
id = 0
agent = { kind = "always_cooperate" }
[[players]]
id = 1
agent = { kind = "always_cooperate" }
[[players]]
id = 2
agent = { kind = "tit_for_tat" }
[[players]]
id = 3
agent = { kind = "always_cooperate" }
"#;

#[test]
fn schedule_line_counts() {
    let config = configs().join("scripted.toml");
    for (condition, want) in [("sa", 15), ("ri", 15), ("gc", 9)] {
        let o = bin()
            .args(["schedule", "--config"])
            .arg(&config)
            .args(["--condition", condition])
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        let lines = pairing_lines(&o);
        assert_eq!(lines.len(), want, "{condition}");
        if condition == "gc" {
            assert!(lines.iter().all(|l| l.ends_with("inter")));
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let four = write_config(dir.path(), ALL_A);
    let o = bin()
        .args(["schedule", "--config"])
        .arg(&four)
        .output()
        .unwrap();
    assert_eq!(pairing_lines(&o).len(), 6);
}

#[test]
fn budget_violation_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &ALL_A.replace("budget = 14", "budget = 15"));
    let o = bin()
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("N < n*m"), "{}", stderr(&o));
}

#[test]
fn unknown_flags_are_rejected() {
    let o = bin()
        .args(["schedule", "--config", "x.toml", "--bogus"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_inputs() {
    let o = bin()
        .args(["schedule", "--config", "/nonexistent/c.toml"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    let o = bin()
        .args(["analyze", "/nonexistent/run"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(6));
}

#[test]
fn scripted_run_analyze_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        &ALL_A.replace("\"tit_for_tat\"", "\"always_cooperate\""),
    );
    let out = dir.path().join("run");
    let o = bin()
        .args(["run", "--config"])
        .arg(&config)
        .args(["--seed", "9", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "coop_by_round.csv",
        "osc_summary.csv",
        "group_split.csv",
        "meta_accuracy.csv",
    ] {
        assert!(out.join("csv").join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["overrides"]["seed"], 9);
    assert_eq!(manifest["status"], "complete");

    let o = bin().arg("analyze").arg(&out).output().unwrap();
    assert!(o.status.success());
    let table = stdout(&o);
    assert!(table.contains("RI         1.000 [1.000, 1.000]"), "{table}");

    let mut exported = Vec::new();
    for name in ["e1", "e2"] {
        let o = bin()
            .arg("export")
            .arg(&out)
            .arg("--out")
            .arg(dir.path().join(name))
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        exported.push(std::fs::read(dir.path().join(name).join("coop_by_round.csv")).unwrap());
    }
    assert_eq!(exported[0], exported[1]);
}

#[test]
fn corrupt_log_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), ALL_A);
    let out = dir.path().join("run");
    let o = bin()
        .args(["run", "--trials", "1", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success());
    let log = out.join("trial_00/events.jsonl");
    let text = std::fs::read_to_string(&log).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[2] = "{not json";
    std::fs::write(&log, lines.join("\n")).unwrap();
    let o = bin().arg("analyze").arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(6));
    assert!(stderr(&o).contains("events.jsonl:3:"), "{}", stderr(&o));
}

#[test]
fn dead_endpoint_is_a_backend_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["run", "--config"])
        .arg(configs().join("model.toml"))
        .args(["--trials", "1", "--out"])
        .arg(dir.path())
        .env("SUPERCOOP_ENDPOINT", "http://127.0.0.1:1")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn endpoint_from_environment() {
    let server = MockServer::start("127.0.0.1:0", MockOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["run", "--config"])
        .arg(configs().join("model.toml"))
        .args(["--trials", "1", "--out"])
        .arg(dir.path())
        .env("SUPERCOOP_ENDPOINT", server.url())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(server.chat_requests() > 0);
}
