mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::{json, Value};

use clarify_cli::report::Report;
use clarify_cli::{cmd_generate_clarifications, cmd_report, cmd_responsiveness, cmd_when_to_clarify, CliError};
use clarify_core::{PromptVariant, WeightingMode};

const ALL: &[&str] = &["likelihood", "self_ask", "semantic_entropy", "intent_sim", "random"];

fn jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn set_mock(dir: &Path, script: &Value) {
    fs::write(dir.join("mock.json"), script.to_string()).unwrap();
}

#[test]
fn when_to_clarify_ranks_every_method() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::rigged_study(dir.path(), ALL);
    let artifact = cmd_when_to_clarify(common::out_to(&config, &dir.path().join("out"))).unwrap();
    let Report::WhenToClarify(r) = &artifact.report else { panic!("wrong report kind") };
    assert!(artifact.failures.is_empty());
    let names: Vec<&str> = r.methods.iter().map(|m| m.method.as_str()).collect();
    assert_eq!(names, ["Likelihood", "Self-Ask", "Semantic Entropy", "Intent-Sim", "Random"]);
    let auroc = |name: &str| r.methods.iter().find(|m| m.method == name).unwrap().auroc.unwrap();
    // Every rigged signal separates the two halves.
    for name in ["Likelihood", "Self-Ask", "Semantic Entropy", "Intent-Sim"] {
        assert_eq!(auroc(name), 1.0, "{name}");
    }

    let outcomes = jsonl(&dir.path().join("out/outcomes.jsonl"));
    assert_eq!(outcomes.len(), 20);
    for o in &outcomes {
        let ambiguous = o["example_id"].as_str().unwrap().starts_with("amb");
        assert_eq!(o["improved"].as_bool().unwrap(), ambiguous);
    }
    assert_eq!(jsonl(&dir.path().join("out/scores.jsonl")).len(), 20 * ALL.len());
    let metadata: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/metadata.json")).unwrap()).unwrap();
    assert_eq!(metadata["backend"], "rigged");
    assert!(metadata["notes"][0].as_str().unwrap().contains("reused"));
}

#[test]
fn ambiguous_only_pool() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::rigged_study(dir.path(), &["intent_sim"]);
    let overrides = clarify_cli::Overrides {
        out: Some(dir.path().join("out")),
        pool: Some(clarify_core::Pool::AmbiguousOnly),
        ..Default::default()
    };
    let artifact = cmd_when_to_clarify(common::load(&config, overrides)).unwrap();
    let Report::WhenToClarify(r) = &artifact.report else { panic!() };
    assert_eq!(r.pool_size, common::AMBIGUOUS);
    // Every ambiguous example improves, so AUROC has no negatives.
    assert_eq!(r.methods[0].auroc, None);
}

#[test]
fn responsiveness_follow_recovers_intent() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::rigged_study(dir.path(), &["intent_sim"]);
    let artifact = cmd_responsiveness(common::out_to(&config, &dir.path().join("out"))).unwrap();
    let Report::Responsiveness(r) = &artifact.report else { panic!() };
    assert_eq!(r.evaluated, common::AMBIGUOUS);
    assert_eq!(r.skipped_unambiguous, common::UNAMBIGUOUS);
    for mode in [WeightingMode::Uniform, WeightingMode::Sampled] {
        assert_eq!(r.performance(PromptVariant::Direct, mode), Some(0.0));
        assert_eq!(r.performance(PromptVariant::Follow, mode), Some(1.0));
        assert_eq!(r.performance(PromptVariant::Disambig, mode), Some(1.0));
    }
    let text = fs::read_to_string(dir.path().join("out/report.txt")).unwrap();
    assert!(text.contains("Follow         100.0 (100.0)"), "{text}");
}

#[test]
fn responsiveness_weighting_modes_differ() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::rigged_study(dir.path(), &["intent_sim"]);
    // Direct now answers the gold intent (index 0) and misses the other one.
    let mut script = common::mock_script();
    let rules = script["rules"].as_array_mut().unwrap();
    let direct = rules.iter_mut().find(|r| r["greedy"]["text"] == "Answer: gamma.").unwrap();
    direct["greedy"]["text"] = json!("Answer: alpha.");
    set_mock(dir.path(), &script);
    let artifact = cmd_responsiveness(common::out_to(&config, &dir.path().join("out"))).unwrap();
    let Report::Responsiveness(r) = &artifact.report else { panic!() };
    assert_eq!(r.performance(PromptVariant::Direct, WeightingMode::Uniform), Some(0.5));
    assert_eq!(r.performance(PromptVariant::Direct, WeightingMode::Sampled), Some(1.0));
}

fn oracle_script() -> Value {
    json!({
        "backend_id": "oracle",
        "rules": [
            {"when": {"contains": "Ambiguous Question: Ambiguous question 3?"}, "greedy": "I am not sure."},
            {"when": {"contains": "Ambiguous Question:"},
             "greedy": "Clarification Question: Which one?\nClarification Response 1: The alpha one.\nClarification Response 2: The beta one."}
        ]
    })
}

#[test]
fn generate_clarifications_records_malformed_output() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::rigged_study(dir.path(), &["intent_sim"]);
    common::write_jsonl(&dir.path().join("corpus.jsonl"), &common::corpus_records(false));
    set_mock(dir.path(), &oracle_script());
    let artifact = cmd_generate_clarifications(common::out_to(&config, &dir.path().join("gen"))).unwrap();
    let Report::Clarifications(s) = &artifact.report else { panic!() };
    assert_eq!((s.examples, s.ambiguous, s.attached, s.failed), (20, 10, 9, 1));
    assert_eq!(artifact.failures.len(), 1);
    assert_eq!(artifact.failures[0].example_id, "amb-03");

    let corpus = jsonl(&dir.path().join("gen/corpus.jsonl"));
    assert_eq!(corpus.len(), 20);
    let with_exchange = corpus.iter().filter(|r| !r["exchange"].is_null()).count();
    assert_eq!(with_exchange, 9);
    assert_eq!(corpus[0]["exchange"]["answers"][1], "The beta one.");
}

#[test]
fn generated_corpus_feeds_responsiveness() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::rigged_study(dir.path(), &["intent_sim"]);
    common::write_jsonl(&dir.path().join("corpus.jsonl"), &common::corpus_records(false));
    set_mock(dir.path(), &oracle_script());
    cmd_generate_clarifications(common::out_to(&config, &dir.path().join("gen"))).unwrap();

    set_mock(dir.path(), &common::mock_script());
    let overrides = clarify_cli::Overrides {
        corpus: Some(dir.path().join("gen/corpus.jsonl")),
        out: Some(dir.path().join("resp")),
        ..Default::default()
    };
    let artifact = cmd_responsiveness(common::load(&config, overrides)).unwrap();
    let Report::Responsiveness(r) = &artifact.report else { panic!() };
    assert_eq!(r.evaluated, 9);
    assert_eq!(r.skipped_missing_exchange, 1);
}

#[test]
fn existing_exchanges_are_kept() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::rigged_study(dir.path(), &["intent_sim"]);
    // No rule matches: any backend call would fail the example.
    set_mock(dir.path(), &json!({"rules": []}));
    let artifact = cmd_generate_clarifications(common::out_to(&config, &dir.path().join("gen"))).unwrap();
    let Report::Clarifications(s) = &artifact.report else { panic!() };
    assert_eq!((s.already_present, s.attached, s.failed), (10, 0, 0));
}

#[test]
fn empty_corpus_gives_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::rigged_study(dir.path(), &["intent_sim"]);
    fs::write(dir.path().join("corpus.jsonl"), "").unwrap();
    let artifact = cmd_when_to_clarify(common::out_to(&config, &dir.path().join("out"))).unwrap();
    let Report::WhenToClarify(r) = &artifact.report else { panic!() };
    assert_eq!(r.pool_size, 0);
    assert!(r.methods.is_empty());
}

#[test]
fn loaded_outcomes_reproduce_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::rigged_study(dir.path(), &["likelihood", "intent_sim"]);
    let first = cmd_when_to_clarify(common::out_to(&config, &dir.path().join("a"))).unwrap();
    let mut rerun = common::out_to(&config, &dir.path().join("b"));
    rerun.outcomes = Some(dir.path().join("a/outcomes.jsonl"));
    let second = cmd_when_to_clarify(rerun).unwrap();
    let (Report::WhenToClarify(a), Report::WhenToClarify(b)) = (&first.report, &second.report) else { panic!() };
    assert_eq!(a.methods, b.methods);
    assert!(b.outcome_source.starts_with("loaded from"));
    assert!(jsonl(&dir.path().join("b/records.jsonl")).is_empty());
}

#[test]
fn report_rerenders_and_rejects_newer_versions() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::rigged_study(dir.path(), &["intent_sim"]);
    cmd_responsiveness(common::out_to(&config, &dir.path().join("out"))).unwrap();
    let out = dir.path().join("out");
    let text = cmd_report(&out, false).unwrap();
    assert_eq!(text, fs::read_to_string(out.join("report.txt")).unwrap());
    let as_json: Value = serde_json::from_str(&cmd_report(&out.join("report.json"), true).unwrap()).unwrap();
    assert_eq!(as_json["report"]["kind"], "responsiveness");

    let path = out.join("report.json");
    let mut stored: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    stored["tool_version"] = json!("99.0.0");
    fs::write(&path, stored.to_string()).unwrap();
    assert!(matches!(cmd_report(&out, false), Err(CliError::VersionMismatch { .. })));
}

fn transport_study(dir: &Path) -> std::path::PathBuf {
    let config = common::rigged_study(dir, &["likelihood"]);
    common::write_jsonl(&dir.join("corpus.jsonl"), &common::corpus_records(true)[..1]);
    set_mock(dir, &json!({"rules": [{"error": {"transport": "connection refused"}}]}));
    config
}

#[test]
fn transport_failure_aborts_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = transport_study(dir.path());
    let err = cmd_when_to_clarify(common::out_to(&config, &dir.path().join("out"))).unwrap_err();
    assert!(matches!(err, CliError::Transport(_)), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn backend_errors_are_per_example() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::rigged_study(dir.path(), &["likelihood"]);
    let mut script = common::mock_script();
    script["rules"]
        .as_array_mut()
        .unwrap()
        .insert(0, json!({"when": {"contains": "Plain question 4?"}, "error": {"status": 400, "body": "bad"}}));
    set_mock(dir.path(), &script);
    let artifact = cmd_when_to_clarify(common::out_to(&config, &dir.path().join("out"))).unwrap();
    let Report::WhenToClarify(r) = &artifact.report else { panic!() };
    assert_eq!((r.pool_size, r.excluded), (19, 1));
    assert_eq!(jsonl(&dir.path().join("out/failures.jsonl"))[0]["example_id"], "plain-04");
}

fn clarify(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_clarify")).args(args).output().unwrap()
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::rigged_study(dir.path(), &["intent_sim"]);
    let out = dir.path().join("out");
    let ok = clarify(&["when-to-clarify", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--budget", "10,50"]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let stdout = String::from_utf8(ok.stdout).unwrap();
    assert!(stdout.contains("Intent-Sim"), "{stdout}");
    assert!(stdout.contains("b=50%"), "{stdout}");

    let reprint = clarify(&["report", out.to_str().unwrap()]);
    assert_eq!(String::from_utf8(reprint.stdout).unwrap(), stdout);

    let missing = clarify(&["when-to-clarify", "--out", out.to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));

    let tdir = tempfile::tempdir().unwrap();
    let tconfig = transport_study(tdir.path());
    let transport = clarify(&["when-to-clarify", "--config", tconfig.to_str().unwrap()]);
    assert_eq!(transport.status.code(), Some(2), "{}", String::from_utf8_lossy(&transport.stderr));
}

#[test]
fn binary_converts_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let input = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/ambigqa_drop_rules.jsonl");
    let output = dir.path().join("qa.jsonl");
    let run = clarify(&["convert", "--format", "ambigqa", input.to_str().unwrap(), output.to_str().unwrap()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(jsonl(&output).len(), 3);
}
