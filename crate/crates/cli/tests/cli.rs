#[path = "../../core/tests/support/server.rs"]
mod server;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use server::{completion, Reply, TestServer};

fn codi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_codi"))
        .args(args)
        .env_remove("CODI_TEACHER_URL")
        .env_remove("CODI_TEACHER_MODEL")
        .env_remove("CODI_CONCURRENCY")
        .output()
        .expect("run codi")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name).display().to_string()
}

fn configs(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name).display().to_string()
}

fn tmp(dir: &tempfile::TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

#[test]
fn validate_graph_exit_codes() {
    let ok = codi(&["validate-graph", "--config", &configs("grounded_qa.json")]);
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
    assert!(stdout(&ok).contains("0 findings"));

    let bad = codi(&["validate-graph", "--config", &data("sum_not_one.json")]);
    assert_eq!(code(&bad), 1);
    assert!(stdout(&bad).contains("SumNotOne"), "{}", stdout(&bad));

    let missing = codi(&["validate-graph", "--config", "/no/such/config.json"]);
    assert_eq!(code(&missing), 2);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = tmp(&dir, "cfg.json");
    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(configs("grounded_qa.json")).unwrap()).unwrap();
    cfg["colour"] = Value::from("blue");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let o = codi(&["validate-graph", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("colour"));
}

#[test]
fn sample_chains_forced_path_and_determinism() {
    let o = codi(&["sample-chains", "--config", &data("forced_path.json"), "--n", "2", "--seed", "5"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), "L1 -> L1 -> L1\nL1 -> L1 -> L1\n");

    let args = ["sample-chains", "--config", &configs("grounded_qa.json"), "--n", "200", "--seed", "9"];
    let a = codi(&args);
    let b = codi(&args);
    assert_eq!(a.stdout, b.stdout);
    let other = codi(&["sample-chains", "--config", &configs("grounded_qa.json"), "--n", "200", "--seed", "10"]);
    assert_ne!(a.stdout, other.stdout);

    let unseeded = codi(&["sample-chains", "--config", &data("forced_path.json"), "--n", "1"]);
    assert_eq!(code(&unseeded), 0);
    assert!(stderr(&unseeded).starts_with("seed: "));

    let invalid = codi(&["sample-chains", "--config", &data("sum_not_one.json"), "--n", "1", "--seed", "1"]);
    assert_eq!(code(&invalid), 1);
}

#[test]
fn sample_chains_length_override() {
    let o = codi(&["sample-chains", "--config", &configs("grounded_qa.json"), "--n", "5", "--seed", "1", "--length", "2"]);
    assert!(stdout(&o).lines().all(|l| l.split(" -> ").count() == 2));
}

fn synth_args<'a>(out: &'a str, n: &'a str) -> Vec<&'a str> {
    vec![
        "synthesize",
        "--config",
        Box::leak(configs("grounded_qa.json").into_boxed_str()),
        "--contexts",
        Box::leak(configs("contexts.jsonl").into_boxed_str()),
        "--seeds",
        Box::leak(configs("seeds.jsonl").into_boxed_str()),
        "--n",
        n,
        "--out",
        out,
        "--seed",
        "11",
    ]
}

#[test]
fn synthesize_with_stub() {
    let dir = tempfile::tempdir().unwrap();
    let out = tmp(&dir, "out.jsonl");
    let mut args = synth_args(out.to_str().unwrap(), "100");
    let stub = configs("stub_fixture.json");
    args.extend(["--stub", &stub]);
    let o = codi(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 100);
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(tmp(&dir, "out.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["produced"], 100);
    assert_eq!(manifest["master_seed"], 11);
}

#[test]
fn synthesize_budget_exhaustion_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    // Only turn 0 is scripted, so every 4-turn conversation fails.
    let fixture = tmp(&dir, "partial.json");
    std::fs::write(
        &fixture,
        r#"{"script":[{"link_id":"L1","turn_index":0,"text":"Q: a?\nA: b."}]}"#,
    )
    .unwrap();
    let out = tmp(&dir, "out.jsonl");
    let mut args = synth_args(out.to_str().unwrap(), "3");
    args.extend(["--stub", fixture.to_str().unwrap()]);
    let o = codi(&args);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("budget exhausted"));
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(tmp(&dir, "out.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["attempted"], 6);
    assert_eq!(manifest["rejections"]["ScriptExhausted"], 6);
}

#[test]
fn synthesize_unreachable_teacher_exits_two() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let dir = tempfile::tempdir().unwrap();
    let out = tmp(&dir, "out.jsonl");
    let url = format!("http://127.0.0.1:{port}/v1/chat/completions");
    let mut args = synth_args(out.to_str().unwrap(), "2");
    args.extend(["--teacher-url", &url]);
    let o = codi(&args);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn synthesize_against_http_teacher() {
    let server = TestServer::start(|n, _| Reply::ok(completion(&format!("Q: question {n}?\nA: answer {n}."))));
    let dir = tempfile::tempdir().unwrap();
    let out = tmp(&dir, "out.jsonl");
    let mut args = synth_args(out.to_str().unwrap(), "3");
    args.extend(["--teacher-url", &server.url, "--concurrency", "1"]);
    let o = codi(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(server.requests(), 12);
    let first: Value = serde_json::from_slice(&server.stats.bodies.lock().unwrap()[0]).unwrap();
    assert_eq!(first["model"], "teacher");
}

#[test]
fn synthesize_rejects_two_sources() {
    let dir = tempfile::tempdir().unwrap();
    let out = tmp(&dir, "out.jsonl");
    let mut args = synth_args(out.to_str().unwrap(), "1");
    let stub = configs("stub_fixture.json");
    args.extend(["--stub", &stub, "--teacher-url", "http://localhost:1/"]);
    assert_eq!(code(&codi(&args)), 2);
}

fn stub_dataset(dir: &tempfile::TempDir, n: &str) -> PathBuf {
    let out = tmp(dir, "ds.jsonl");
    let mut args = synth_args(out.to_str().unwrap(), n);
    let stub = configs("stub_fixture.json");
    args.extend(["--stub", &stub]);
    assert_eq!(code(&codi(&args)), 0);
    out
}

#[test]
fn annotate_weights_default_policy() {
    let dir = tempfile::tempdir().unwrap();
    let ds = stub_dataset(&dir, "5");
    let out = tmp(&dir, "w.jsonl");
    let o = codi(&["annotate-weights", "--in", ds.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 5);
    for line in text.lines() {
        let ex: Value = serde_json::from_str(line).unwrap();
        for span in ex["spans"].as_array().unwrap() {
            let expected = if span[2] == "AGENT" { 1.0 } else { 0.0 };
            assert_eq!(span[4].as_f64().unwrap(), expected, "{span}");
        }
    }

    let custom = tmp(&dir, "w2.jsonl");
    let policy = configs("weight_policy.json");
    let o = codi(&["annotate-weights", "--in", ds.to_str().unwrap(), "--policy", &policy, "--out", custom.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(std::fs::read_to_string(&custom).unwrap().contains("0.1"));
}

#[test]
fn annotate_weights_errors() {
    let dir = tempfile::tempdir().unwrap();
    let ds = stub_dataset(&dir, "2");
    let mut lines: Vec<String> = std::fs::read_to_string(&ds).unwrap().lines().map(str::to_owned).collect();
    lines.insert(1, "{\"schema\": \"codi/1\", \"oops\": true".to_string());
    let bad = tmp(&dir, "bad.jsonl");
    std::fs::write(&bad, lines.join("\n")).unwrap();
    let out = tmp(&dir, "w.jsonl");
    let o = codi(&["annotate-weights", "--in", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
    assert!(!out.exists());

    let empty = tmp(&dir, "empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let o = codi(&["annotate-weights", "--in", empty.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "");
}

#[test]
fn evaluate_offline_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let report = tmp(&dir, "report.json");
    let csv = tmp(&dir, "turns.csv");
    let o = codi(&[
        "evaluate",
        "--gold",
        &data("coqa_mini.json"),
        "--format",
        "coqa",
        "--pred",
        &data("coqa_mini_gold_preds.jsonl"),
        "--metric",
        "f1",
        "--per-turn",
        "--report",
        report.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["corpus_mean"], 1.0);
    assert!(stdout(&o).contains("turn"));
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("turn_index,count,mean"));

    let o = codi(&["evaluate", "--gold", &data("quac_mini.json"), "--format", "coqa", "--pred", &data("coqa_mini_gold_preds.jsonl")]);
    assert_eq!(code(&o), 2);
    let o = codi(&["evaluate", "--gold", &data("coqa_mini.json"), "--format", "coqa"]);
    assert_eq!(code(&o), 2);
}

/// Serves the gold answer for whichever question the prompt ends with.
fn oracle_server(gold: &str, format: &str) -> TestServer {
    let set: Value = serde_json::from_str(&std::fs::read_to_string(gold).unwrap()).unwrap();
    let mut answers: HashMap<String, String> = HashMap::new();
    if format == "coqa" {
        for story in set["data"].as_array().unwrap() {
            for (q, a) in story["questions"].as_array().unwrap().iter().zip(story["answers"].as_array().unwrap()) {
                answers.insert(q["input_text"].as_str().unwrap().into(), a["input_text"].as_str().unwrap().into());
            }
        }
    } else {
        for p in set["data"][0]["paragraphs"].as_array().unwrap() {
            for qa in p["qas"].as_array().unwrap() {
                answers.insert(qa["question"].as_str().unwrap().into(), qa["answers"][0]["text"].as_str().unwrap().into());
            }
        }
    }
    TestServer::start(move |_, body| {
        let req: Value = serde_json::from_slice(body).unwrap();
        let prompt = req["messages"][0]["content"].as_str().unwrap();
        let q = prompt.rsplit("[USER] ").next().unwrap().split(" [/USER]").next().unwrap();
        Reply::ok(completion(&format!("{} [/AGENT]", answers[q])))
    })
}

#[test]
fn evaluate_oracle_model_over_http() {
    for (file, format) in [("coqa_mini.json", "coqa"), ("quac_mini.json", "quac")] {
        let gold = data(file);
        let server = oracle_server(&gold, format);
        let mut reports = Vec::new();
        for history in ["gold", "pred"] {
            let o = codi(&[
                "evaluate", "--gold", &gold, "--format", format, "--model-url", &server.url, "--history", history,
                "--metric", "recall", "--json",
            ]);
            assert_eq!(code(&o), 0, "{}", stderr(&o));
            let mut r: Value = serde_json::from_str(&stdout(&o)).unwrap();
            assert_eq!(r["corpus_mean"], 1.0, "{format} {history}");
            r.as_object_mut().unwrap().remove("history_mode");
            reports.push(r);
        }
        assert_eq!(reports[0], reports[1]);
    }
}

#[test]
fn evaluate_unreachable_model_exits_two() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}/v1/chat/completions");
    let o = codi(&["evaluate", "--gold", &data("coqa_mini.json"), "--format", "coqa", "--model-url", &url]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn evaluate_mostly_failing_model_exits_one() {
    let server = TestServer::start(|_, _| Reply::status(400));
    let o = codi(&["evaluate", "--gold", &data("coqa_mini.json"), "--format", "coqa", "--model-url", &server.url]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("skipped"));
}

#[test]
fn length_stats_cases() {
    let o = codi(&["length-stats", "--in", &data("lengths.jsonl"), "--field", "answer"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stats: Value = serde_json::from_str(stdout(&o).lines().next().unwrap()).unwrap();
    assert_eq!(stats["average"], 2.5);
    assert_eq!(stats["median"], 2);
    assert_eq!(stats["p90"], 3);

    let o = codi(&["length-stats", "--in", &data("coqa_mini.json"), "--field", "data[].answers[].input_text"]);
    assert_eq!(code(&o), 0);
    let stats: Value = serde_json::from_str(stdout(&o).lines().next().unwrap()).unwrap();
    assert_eq!(stats["count"], 5);

    let o = codi(&["length-stats", "--in", &data("lengths.jsonl"), "--field", "missing"]);
    assert_eq!(code(&o), 2);

    let dir = tempfile::tempdir().unwrap();
    let empty = tmp(&dir, "empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let o = codi(&["length-stats", "--in", empty.to_str().unwrap(), "--field", "answer"]);
    assert_eq!(code(&o), 2);
}
