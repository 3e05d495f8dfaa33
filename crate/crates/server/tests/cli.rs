mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::{ServerProcess, ADMIN};
use serde_json::{json, Value};

fn banditry(server: Option<&str>, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_banditry"));
    cmd.args(args)
        .env_remove("BANDITRY_SERVER")
        .env_remove("BANDITRY_ADMIN_TOKEN");
    if let Some(base) = server {
        cmd.env("BANDITRY_SERVER", base)
            .env("BANDITRY_ADMIN_TOKEN", ADMIN);
    }
    cmd.output().unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, doc: &Value) -> String {
    let path = dir.join(name);
    fs::write(&path, doc.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn experiment_lifecycle_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let server = ServerProcess::spawn(&dir.path().join("data"), &[]);
    let base = Some(server.base.as_str());
    let policy = write(dir.path(), "runsmart.json", &json!({"kind": "mean_goal"}));

    let created: Value = serde_json::from_str(&stdout(&banditry(
        base,
        &[
            "exp",
            "create",
            "--name",
            "runsmart",
            "--policy-file",
            &policy,
        ],
    )))
    .unwrap();
    let id = created["id"].as_u64().unwrap();
    let key = created["key"].as_str().unwrap().to_string();

    // the printed pair works against the protocol straight away
    let api = server.api();
    assert_eq!(
        api.action(id, &key, &json!({"weather": "sunny", "userid": 12}))["distance"],
        json!(1.0)
    );

    // fresh θ dumps nothing
    assert_eq!(
        stdout(&banditry(base, &["theta", "dump", "--id", &id.to_string()])),
        ""
    );
    api.reward(
        id,
        &key,
        &json!({"weather": "sunny", "userid": 12}),
        &json!({"type": "run", "distance": 6}),
        &json!({"km": 8}),
    );
    api.reward(
        id,
        &key,
        &json!({"weather": "rainy", "userid": 3}),
        &json!({}),
        &json!({"km": 2}),
    );

    let dump = stdout(&banditry(base, &["theta", "dump", "--id", &id.to_string()]));
    let lines: Vec<Value> = dump
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    // same records as the REST call, in the same order
    assert_eq!(Value::Array(lines.clone()), api.theta(id));
    let filtered = stdout(&banditry(
        base,
        &[
            "theta",
            "dump",
            "--id",
            &id.to_string(),
            "--value",
            "sunny12",
        ],
    ));
    assert_eq!(filtered.lines().count(), 1);
    assert!(filtered.contains(r#""state":{"kind":"mean","mean":8.0,"n":1}"#));

    let second = write(
        dir.path(),
        "ab.json",
        &json!({"kind": "epsilon_first", "params": {"arms": ["A", "B"]}}),
    );
    stdout(&banditry(
        base,
        &["exp", "create", "--name", "ab", "--policy-file", &second],
    ));
    let list = stdout(&banditry(base, &["exp", "list"]));
    let ids: Vec<u64> = list
        .lines()
        .map(|l| {
            serde_json::from_str::<Value>(l).unwrap()["id"]
                .as_u64()
                .unwrap()
        })
        .collect();
    assert_eq!(ids, vec![id, id + 1]);

    let out = dir.path().join("log.ndjson");
    stdout(&banditry(
        base,
        &[
            "log",
            "export",
            "--id",
            &id.to_string(),
            "--out",
            out.to_str().unwrap(),
        ],
    ));
    let exported: Vec<Value> = fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let ts: Vec<u64> = exported.iter().map(|r| r["t"].as_u64().unwrap()).collect();
    assert_eq!(ts, vec![1, 2, 3]);
    assert_eq!(exported[1]["reward"], json!({"km": 8}));

    stdout(&banditry(
        base,
        &["exp", "delete", "--id", &(id + 1).to_string()],
    ));
    assert_eq!(stdout(&banditry(base, &["exp", "list"])).lines().count(), 1);
}

#[test]
fn failures_exit_nonzero_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let server = ServerProcess::spawn(&dir.path().join("data"), &[]);
    let out = banditry(Some(&server.base), &["exp", "delete", "--id", "42"]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("not_found"));

    let mut cmd = Command::new(env!("CARGO_BIN_EXE_banditry"));
    let out = cmd
        .args([
            "exp",
            "list",
            "--server",
            &server.base,
            "--admin-token",
            "wrong",
        ])
        .env_remove("BANDITRY_ADMIN_TOKEN")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("admin_token"));

    let out = banditry(Some("http://127.0.0.1:1"), &["exp", "list"]);
    assert!(!out.status.success());
    let missing = banditry(
        Some(&server.base),
        &[
            "exp",
            "create",
            "--name",
            "x",
            "--policy-file",
            "/nonexistent.json",
        ],
    );
    assert!(!missing.status.success());
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let args = [
            "simulate",
            "--env",
            "bernoulli:0.5,0.6",
            "--horizon",
            "10000",
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ];
        stdout(&banditry(None, &args));
        fs::read(out).unwrap()
    };
    let a = run("a.json");
    assert_eq!(a, run("b.json"));
    let report: Value = serde_json::from_slice(&a).unwrap();
    for field in [
        "env",
        "config",
        "horizon",
        "replications",
        "seed",
        "mean_R",
        "sd_R",
        "per_rep",
        "freq",
    ] {
        assert!(report.get(field).is_some(), "missing {field}");
    }
    assert_eq!(report["horizon"], 10000);
    assert_eq!(report["config"]["kind"], "thompson_bernoulli");
}

#[test]
fn simulate_with_policy_and_children() {
    let dir = tempfile::tempdir().unwrap();
    let fixed = write(
        dir.path(),
        "fixed.json",
        &json!({"kind": "epsilon_first", "params": {"arms": ["B"], "exploration_n": 0}}),
    );
    let out = stdout(&banditry(
        None,
        &[
            "simulate",
            "--env",
            "bernoulli:A=0.5,B=0.6",
            "--policy-file",
            &fixed,
            "--horizon",
            "10000",
            "--seed",
            "3",
        ],
    ));
    let report: Value = serde_json::from_str(&out).unwrap();
    let rate = report["mean_R"].as_f64().unwrap() / 10000.0;
    assert!((rate - 0.6).abs() < 0.02, "{rate}");
    assert_eq!(report["freq"], json!({"B": 1.0}));

    let uniform = write(
        dir.path(),
        "u.json",
        &json!({"kind": "epsilon_first", "params": {"arms": ["A"], "exploration_n": 0}}),
    );
    let nested = write(
        dir.path(),
        "n.json",
        &json!({"kind": "nested", "nested_ids": [1, 2]}),
    );
    let child_a = format!("1={uniform}");
    let child_b = format!("2={fixed}");
    let out = stdout(&banditry(
        None,
        &[
            "simulate",
            "--env",
            "bernoulli:A=0.5,B=0.6",
            "--policy-file",
            &nested,
            "--child",
            &child_a,
            "--child",
            &child_b,
            "--horizon",
            "4000",
            "--seed",
            "1",
        ],
    ));
    let report: Value = serde_json::from_str(&out).unwrap();
    assert!((report["freq"]["A"].as_f64().unwrap() - 0.5).abs() < 0.04);

    let bad = banditry(None, &["simulate", "--env", "bernoulli:2"]);
    assert!(!bad.status.success());
}
