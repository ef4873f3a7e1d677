//! Rigged QA study used by the integration and acceptance tests.
//!
//! Ambiguous examples ("Ambiguous question i?") are answered wrongly
//! without clarification and correctly after it; their simulated users
//! split 6/4 between two intents. Unambiguous examples ("Plain question
//! i?") get one answer regardless, right for even i and wrong for odd i,
//! and their simulated users always agree.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use clarify_cli::{ConfigFile, Overrides, RunConfig};

pub const AMBIGUOUS: usize = 10;
pub const UNAMBIGUOUS: usize = 10;

pub fn corpus_records(with_exchange: bool) -> Vec<Value> {
    let mut out = Vec::new();
    for i in 0..AMBIGUOUS {
        let mut r = json!({
            "id": format!("amb-{i:02}"),
            "task": "qa",
            "input": format!("Ambiguous question {i}?"),
            "interpretations": [
                {"disambiguated_input": format!("Ambiguous question {i}, first sense?"), "output": ["alpha"]},
                {"disambiguated_input": format!("Ambiguous question {i}, second sense?"), "output": ["beta"]}
            ],
            "gold_index": 0,
        });
        if with_exchange {
            r["exchange"] = json!({"question": "Which one?", "answers": ["The alpha one.", "The beta one."]});
        }
        out.push(r);
    }
    for i in 0..UNAMBIGUOUS {
        let gold = if i % 2 == 0 { "delta" } else { "epsilon" };
        out.push(json!({
            "id": format!("plain-{i:02}"),
            "task": "qa",
            "input": format!("Plain question {i}?"),
            "interpretations": [{"output": [gold]}],
            "gold_index": 0,
        }));
    }
    out
}

pub fn mock_script() -> Value {
    let six_four = json!([
        "Option A.", "Option A.", "Option A.", "The first option.", "The first option.", "The first option.",
        "Option B.", "Option B.", "Option B.", "Option B."
    ]);
    json!({
        "backend_id": "rigged",
        "default_token_logprob": -0.25,
        "rules": [
            {"when": {"last_role": "user", "last_contains": "Follow-Up Response:", "contains": "Ambiguous", "within_last": 3},
             "pool": six_four},
            {"when": {"last_role": "user", "last_contains": "Follow-Up Response:"}, "samples": ["Option A."]},
            {"when": {"last_role": "assistant", "last_contains": "Follow-Up Question:"},
             "greedy": "Follow-Up Question: Which one?"},
            {"when": {"last_contains": "Needed Here?", "contains": "Ambiguous", "within_last": 2},
             "continuations": [{"text": " No", "token_logprobs": [-1.2]}]},
            {"when": {"last_contains": "Needed Here?"},
             "continuations": [{"text": " No", "token_logprobs": [-0.1]}]},
            {"when": {"contains": "The alpha one.", "within_last": 2}, "greedy": "Answer: alpha."},
            {"when": {"contains": "The beta one.", "within_last": 2}, "greedy": "Answer: beta."},
            {"when": {"contains": "first sense", "within_last": 2}, "greedy": "Answer: alpha."},
            {"when": {"contains": "second sense", "within_last": 2}, "greedy": "Answer: beta."},
            {"when": {"contains": "Ambiguous", "within_last": 2},
             "greedy": {"text": "Answer: gamma.", "token_logprobs": [-0.1, -2.5]},
             "samples": ["Answer: alpha.", "Answer: beta.", "Answer: alpha."]},
            {"when": {"contains": "Plain", "within_last": 2},
             "greedy": {"text": "Answer: delta.", "token_logprobs": [-0.1, -0.3]},
             "samples": ["Answer: delta."]}
        ]
    })
}

pub fn judge_script() -> Value {
    json!({"groups": [["Option A.", "The first option."], ["Option B."]]})
}

pub fn write_jsonl(path: &Path, records: &[Value]) {
    let text: String = records.iter().map(|r| format!("{r}\n")).collect();
    fs::write(path, text).unwrap();
}

/// Writes the rigged study into `dir` and returns the config path.
pub fn rigged_study(dir: &Path, estimators: &[&str]) -> PathBuf {
    write_jsonl(&dir.join("corpus.jsonl"), &corpus_records(true));
    fs::write(dir.join("mock.json"), mock_script().to_string()).unwrap();
    fs::write(dir.join("judge.json"), judge_script().to_string()).unwrap();
    let list: Vec<String> = estimators.iter().map(|e| format!("\"{e}\"")).collect();
    let config = format!(
        r#"task = "qa"
corpus = "corpus.jsonl"
seed = 11
estimators = [{}]
budgets = [0, 10, 20, 30, 50, 100]
cache_dir = "cache"
output_dir = "out"
parallelism = 3

[backend]
kind = "mock"
script = "mock.json"

[judge]
kind = "scripted"
path = "judge.json"

[estimator]
samples = 10
exemplars = 0
"#,
        list.join(", ")
    );
    let path = dir.join("run.toml");
    fs::write(&path, config).unwrap();
    path
}

pub fn load(config: &Path, overrides: Overrides) -> RunConfig {
    RunConfig::build(ConfigFile::load(config).unwrap(), overrides).unwrap()
}

pub fn out_to(config: &Path, out: &Path) -> RunConfig {
    load(config, Overrides { out: Some(out.to_path_buf()), ..Default::default() })
}

/// Every artifact file except the timing record, sorted by name.
pub fn artifact_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file() && p.file_name().unwrap() != "timing.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}
