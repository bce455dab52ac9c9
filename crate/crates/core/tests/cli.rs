use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adacompute"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn read_json(path: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn generate(dir: &Path, name: &str, family: &str, n: &str, bmax: &str, seed: &str) -> String {
    let path = p(dir, name);
    ok(&["generate", "--family", family, "--n", n, "--bmax", bmax, "--seed", seed, "-o", &path]);
    path
}

#[test]
fn generate_writes_one_line_per_query() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "d.jsonl", "math-like", "1000", "128", "7");
    let text = std::fs::read_to_string(&data).unwrap();
    assert_eq!(text.lines().count(), 1001);
    let header: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(header["bmax"], 128);
    let record: Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
    assert_eq!(record["rewards"].as_array().unwrap().len(), 128);
}

#[test]
fn manifest_is_echoed_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let data = p(dir.path(), "d.jsonl");
    let out = ok(&["generate", "--family", "code-like", "--n", "10", "--bmax", "4", "--seed", "3", "-o", &data]);
    let manifest: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["command"]["generate"]["family"], "code-like");
    assert_eq!(manifest["versions"]["dataset_schema"], 1);
    assert_eq!(manifest["summary"]["records"], 10);
}

#[test]
fn sweep_emits_one_row_per_method_and_budget() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "d.jsonl", "math-like", "200", "32", "1");
    let report = p(dir.path(), "report.csv");
    ok(&[
        "sweep", "--methods", "uniform,online,oracle", "--budgets", "1,2,4,8,16", "-i", &data, "-o", &report,
    ]);
    let mut reader = csv::Reader::from_path(&report).unwrap();
    let headers = reader.headers().unwrap().clone();
    assert_eq!(
        headers.iter().collect::<Vec<_>>(),
        ["budget", "method", "value", "ci_low", "ci_high", "realized_budget"]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 15);
    for r in &rows {
        let v: f64 = r[2].parse().unwrap();
        let lo: f64 = r[3].parse().unwrap();
        let hi: f64 = r[4].parse().unwrap();
        assert!(lo <= v && v <= hi && (0.0..=1.0).contains(&v));
    }

    let json_report = p(dir.path(), "report.json");
    ok(&["sweep", "--methods", "uniform", "--budget", "2", "-i", &data, "-o", &json_report]);
    let v = read_json(&json_report);
    assert_eq!(v["metric_kind"], "success-rate");
    assert_eq!(v["rows"].as_array().unwrap().len(), 1);
}

#[test]
fn allocations_stay_within_budget() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "d.jsonl", "code-like", "157", "16", "2");
    let alloc = p(dir.path(), "a.json");
    ok(&["allocate", "-i", &data, "--budget", "0.3,1,2.5,7.77,16", "--oracle-noise", "0.05", "-o", &alloc]);
    let v = read_json(&alloc);
    let entries = v["allocations"].as_array().unwrap();
    assert_eq!(entries.len(), 5);
    for e in entries {
        let b = e["average_budget"].as_f64().unwrap();
        let budgets: Vec<u64> = e["budgets"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect();
        assert_eq!(budgets.len(), 157);
        assert!(budgets.iter().sum::<u64>() <= (b * 157.0 + 1e-9).floor() as u64);
        assert!(budgets.iter().all(|&x| x <= 16));
        assert_eq!(e["ids"].as_array().unwrap().len(), 157);
    }
}

#[test]
fn chat_allocations_give_every_query_a_response() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "chat.jsonl", "chat-like", "100", "8", "3");
    let alloc = p(dir.path(), "a.json");
    ok(&["allocate", "-i", &data, "--budget", "1,2", "-o", &alloc]);
    for e in read_json(&alloc)["allocations"].as_array().unwrap() {
        assert!(e["budgets"].as_array().unwrap().iter().all(|x| x.as_u64().unwrap() >= 1));
    }
    let out = run(&["allocate", "-i", &data, "--budget", "0.5", "-o", &alloc]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn full_pipeline_runs_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let snapshot = |tag: &str| -> Vec<(String, Vec<u8>)> {
        let f = |name: &str| p(d, &format!("{tag}-{name}"));
        let steps: Vec<Vec<String>> = vec![
            vec!["generate", "--family", "math-like", "--n", "300", "--bmax", "16", "-o", &f("train.jsonl")],
            vec!["generate", "--family", "math-like", "--n", "200", "--bmax", "16", "--seed", "5", "-o", &f("test.jsonl")],
            vec!["generate", "--family", "chat-like", "--n", "100", "--bmax", "8", "-o", &f("chat.jsonl")],
            vec!["generate", "--family", "routing", "--n", "200", "--bmax", "8", "-o", &f("route.jsonl")],
            vec!["estimate", "-i", &f("test.jsonl"), "--method", "bootstrap", "--resamples", "500", "--ci-replicates", "20", "--bmax", "8", "-o", &f("curves.jsonl")],
            vec!["train", "-i", &f("train.jsonl"), "--head", "lambda", "--arch", "mlp", "--hidden", "4", "--epochs", "20", "-o", &f("lambda.json")],
            vec!["train", "-i", &f("train.jsonl"), "--head", "delta-vector", "--epochs", "10", "-o", &f("delta.json")],
            vec!["train", "-i", &f("route.jsonl"), "--head", "preference", "--epochs", "20", "-o", &f("pref.json")],
            vec!["metrics", "-i", &f("test.jsonl"), "--params", &f("lambda.json"), "--budget", "2,8", "-o", &f("metrics.json")],
            vec!["metrics", "-i", &f("test.jsonl"), "--params", &f("delta.json"), "-o", &f("metrics-delta.json")],
            vec!["fit-policy", "-i", &f("train.jsonl"), "--params", &f("lambda.json"), "--budget", "2,4", "--bins", "5", "-o", &f("policy.json")],
            vec!["allocate", "-i", &f("test.jsonl"), "--params", &f("lambda.json"), "--policy", &f("policy.json"), "-o", &f("offline.json")],
            vec!["allocate", "-i", &f("test.jsonl"), "--params", &f("delta.json"), "--budget", "3", "-o", &f("online.json")],
            vec!["route", "-i", &f("route.jsonl"), "--budget", "1.2,1.5", "--strategy", "random", "--seed", "4", "-o", &f("random.json")],
            vec!["route", "-i", &f("route.jsonl"), "--budget", "1.5", "--params", &f("pref.json"), "-o", &f("learned.json")],
            vec!["sweep", "-i", &f("test.jsonl"), "--methods", "uniform,online,offline,oracle", "--heldout", &f("train.jsonl"), "--oracle-noise", "0.02", "--budget", "1,4", "--ci-resamples", "50", "-o", &f("sweep.csv")],
            vec!["sweep", "-i", &f("route.jsonl"), "--methods", "route-oracle,route-learned,route-random,all-weak,all-strong", "--preference-params", &f("pref.json"), "--budget", "1.25,1.75", "--ci-resamples", "50", "-o", &f("routing.csv")],
            vec!["sweep", "-i", &f("chat.jsonl"), "--methods", "uniform,oracle", "--budget", "1,3", "--ci-resamples", "50", "-o", &f("chat.csv")],
            vec!["tranches", "-i", &f("chat.jsonl"), "-o", &f("tranches.jsonl")],
        ]
        .into_iter()
        .map(|v| v.into_iter().map(String::from).collect())
        .collect();
        let mut outputs = Vec::new();
        for step in &steps {
            let args: Vec<&str> = step.iter().map(String::as_str).collect();
            let out = ok(&args);
            let target = step.iter().skip_while(|a| *a != "-o").nth(1).unwrap();
            let name = Path::new(target).file_name().unwrap().to_string_lossy().replacen(&format!("{tag}-"), "", 1);
            outputs.push((name, std::fs::read(target).unwrap()));
            let stderr = String::from_utf8(out.stderr).unwrap().replace(&format!("/{tag}-"), "/");
            outputs.push((format!("{}-manifest", step[0]), stderr.into_bytes()));
        }
        outputs
    };
    let first = snapshot("a");
    let second = snapshot("b");
    for ((name, a), (_, b)) in first.iter().zip(&second) {
        assert!(a == b, "{name} differs between runs");
    }

    let get = |name: &str| first.iter().find(|(n, _)| n == name).unwrap().1.clone();
    let tranches = String::from_utf8(get("tranches.jsonl")).unwrap();
    assert_eq!(tranches.lines().count(), 1 + 20);
    let curves = String::from_utf8(get("curves.jsonl")).unwrap();
    assert_eq!(curves.lines().count(), 200);
    let line: Value = serde_json::from_str(curves.lines().next().unwrap()).unwrap();
    assert_eq!(line["quality"].as_array().unwrap().len(), 9);
    let metrics: Value = serde_json::from_slice(&get("metrics.json")).unwrap();
    assert!(metrics["metrics"]["model_loss"].as_f64().unwrap() >= 0.0);
    assert_eq!(metrics["breakdown"]["per_budget"].as_array().unwrap().len(), 2);
    let offline: Value = serde_json::from_slice(&get("offline.json")).unwrap();
    assert_eq!(offline["allocations"].as_array().unwrap().len(), 2);
    let strict = run(&[
        "allocate", "-i", &p(d, "a-test.jsonl"), "--params", &p(d, "a-delta.json"), "--budget", "3", "--mode", "strict",
    ]);
    assert_eq!(strict.status.code(), Some(2));
    let routing = String::from_utf8(get("routing.csv")).unwrap();
    assert_eq!(routing.lines().count(), 1 + 10);
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(run(&["generate", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&[]).status.code(), Some(1));
    let out = run(&["sweep", "-i", "x.jsonl", "--methods", "uniform", "--budget", "abc"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = p(dir.path(), "missing.jsonl");
    assert_eq!(run(&["tranches", "-i", &missing]).status.code(), Some(2));

    let empty = p(dir.path(), "empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = run(&["estimate", "-i", &empty]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty dataset"));

    let data = generate(dir.path(), "d.jsonl", "math-like", "5", "4", "1");
    let mut text = std::fs::read_to_string(&data).unwrap();
    text.push_str("{\"id\":\"extra\",\"rewards\":[1,0]}\n");
    let broken = p(dir.path(), "broken.jsonl");
    std::fs::write(&broken, text).unwrap();
    let out = run(&["estimate", "-i", &broken]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 7"));

    let out = run(&["sweep", "-i", &data, "--methods", "best", "--budget", "1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn outputs_go_to_stdout_without_a_path() {
    let out = ok(&["generate", "--family", "math-like", "--n", "3", "--bmax", "2"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 4);
}
