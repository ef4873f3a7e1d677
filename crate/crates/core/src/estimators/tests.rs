use std::sync::Arc;

use serde_json::json;

use super::*;
use crate::corpus::{ClarifyingExchange, Interpretation, TaskOutput};
use crate::equivalence::ExactMatchJudge;
use crate::gateway::mock::{MockBackend, MockScript};
use crate::gateway::GatewayConfig;

fn gateway(script: serde_json::Value) -> Gateway {
    let s = MockScript::from_json(&script.to_string()).unwrap();
    Gateway::new(Arc::new(MockBackend::new(s)), None, GatewayConfig::default())
}

fn qa(id: &str, input: &str) -> AmbiguousExample {
    AmbiguousExample {
        id: id.into(),
        task: TaskKind::Qa,
        input: input.into(),
        interpretations: vec![Interpretation {
            index: 0,
            disambiguated_input: None,
            context: None,
            output: TaskOutput::Answers(vec!["x".into()]),
        }],
        gold_index: Some(0),
        is_ambiguous: false,
        exchange: None,
    }
}

fn exemplar() -> AmbiguousExample {
    AmbiguousExample {
        id: "ex0".into(),
        task: TaskKind::Qa,
        input: "Who won the cup?".into(),
        interpretations: vec![
            Interpretation {
                index: 0,
                disambiguated_input: Some("Who won the 2010 cup?".into()),
                context: None,
                output: TaskOutput::Answers(vec!["Spain".into()]),
            },
            Interpretation {
                index: 1,
                disambiguated_input: Some("Who won the 2014 cup?".into()),
                context: None,
                output: TaskOutput::Answers(vec!["Germany".into()]),
            },
        ],
        gold_index: Some(0),
        is_ambiguous: true,
        exchange: Some(ClarifyingExchange {
            question: "Which year?".into(),
            answers: vec!["2010.".into(), "2014.".into()],
        }),
    }
}

struct Fixture {
    gateway: Gateway,
    book: PromptBook,
    pool: ExemplarPool,
    config: EstimatorConfig,
}

impl Fixture {
    fn new(script: serde_json::Value) -> Self {
        Self {
            gateway: gateway(script),
            book: PromptBook::builtin(),
            pool: ExemplarPool::new(TaskKind::Qa, vec![exemplar()]).unwrap(),
            config: EstimatorConfig { samples: 4, exemplars: 1, ..Default::default() },
        }
    }

    fn ctx(&self) -> EstimatorContext<'_> {
        EstimatorContext {
            gateway: &self.gateway,
            judge: &ExactMatchJudge,
            book: &self.book,
            pool: &self.pool,
            config: &self.config,
            limits: DecodeLimits::for_task(TaskKind::Qa),
        }
    }
}

#[test]
fn likelihood_is_mean_negative_logprob() {
    let f = Fixture::new(json!({"rules": [
        {"when": {"contains": "medals"}, "greedy": {"text": "Answer: 58.", "token_logprobs": [-0.5, -1.5]}}
    ]}));
    let s = f.ctx().score(Method::Likelihood, &qa("a", "How many medals?")).unwrap();
    assert_eq!(s.value, 1.0);
    assert_eq!(s.metadata.logprob_sum, Some(-2.0));
}

#[test]
fn likelihood_rejects_empty_completion() {
    let f = Fixture::new(json!({"rules": [{"greedy": {"text": "", "token_logprobs": []}}]}));
    let e = f.ctx().score(Method::Likelihood, &qa("a", "q?")).unwrap_err();
    assert!(matches!(e, EstimatorError::EmptyCompletion(_)));
}

#[test]
fn self_ask_uses_forced_no_probability() {
    let f = Fixture::new(json!({"rules": [
        {"when": {"last_contains": "Needed Here?"}, "continuations": [{"text": " No", "token_logprobs": [(0.9f64).ln()]}]}
    ]}));
    let s = f.ctx().score(Method::SelfAsk, &qa("a", "q?")).unwrap();
    assert!((s.value - 0.1).abs() < 1e-12);
    assert_eq!(s.metadata.probability_source, Some(ProbabilitySource::ForcedScoring));
}

#[test]
fn self_ask_falls_back_to_sampling() {
    let f = Fixture::new(json!({"supports_scoring": false, "rules": [
        {"samples": [" No.\nAnswer: 3.", " Yes.\nFollow-Up Question: Which one?", " No.", " maybe"]}
    ]}));
    let s = f.ctx().score(Method::SelfAsk, &qa("a", "q?")).unwrap();
    // 20 samples cycling through 4 scripted outputs, half of them "No".
    assert_eq!(s.value, 0.5);
    assert_eq!(s.metadata.probability_source, Some(ProbabilitySource::SamplingFallback));
    assert_eq!(s.metadata.sample_count, Some(20));

    let strict = Fixture {
        config: EstimatorConfig { sampling_fallback: false, ..f.config.clone() },
        ..Fixture::new(json!({"supports_scoring": false, "rules": [{"greedy": "x"}]}))
    };
    let e = strict.ctx().score(Method::SelfAsk, &qa("a", "q?")).unwrap_err();
    assert!(matches!(e, EstimatorError::Gateway(GatewayError::UnsupportedCapability(_))));
}

#[test]
fn semantic_entropy_counts_clusters() {
    let f = Fixture::new(json!({"rules": [
        {"when": {"contains": "two-way"}, "samples": ["Answer: 58.", "Answer: 16."]},
        {"when": {"contains": "settled"}, "samples": ["Answer: 58."]},
        {"when": {"contains": "broken"}, "samples": ["Answer: 58.", ""]}
    ]}));
    let ctx = f.ctx();
    let split = ctx.score(Method::SemanticEntropy, &qa("a", "two-way?")).unwrap();
    assert!((split.value - 2f64.ln()).abs() < 1e-12);
    assert_eq!(split.metadata.cluster_sizes, Some(vec![2, 2]));
    let settled = ctx.score(Method::SemanticEntropy, &qa("b", "settled?")).unwrap();
    assert_eq!(settled.value, 0.0);
    // Unparseable samples are singletons.
    let broken = ctx.score(Method::SemanticEntropy, &qa("c", "broken?")).unwrap();
    assert_eq!(broken.metadata.cluster_sizes, Some(vec![2, 1, 1]));
    assert_eq!(broken.metadata.unparseable_samples, Some(2));
}

#[test]
fn intent_sim_clusters_simulated_answers() {
    let f = Fixture::new(json!({"rules": [
        {"when": {"last_role": "user", "last_contains": "Follow-Up Response:", "contains": "trunk"},
         "samples": ["The car.", "The tree.", "The car.", "The elephant."]},
        {"when": {"contains": "trunk"}, "greedy": "Follow-Up Question: Which trunk?"},
        {"when": {"contains": "vague"}, "greedy": "I cannot say."},
        {"when": {"contains": "vague"}, "samples": ["Answer: 1."]}
    ]}));
    let ctx = f.ctx();
    let s = ctx.score(Method::IntentSim, &qa("t", "Where is the trunk?")).unwrap();
    let oracle = -(0.5f64 * 0.5f64.ln() + 2.0 * 0.25 * 0.25f64.ln());
    assert!((s.value - oracle).abs() < 1e-12);
    assert_eq!(s.metadata.question.as_deref(), Some("Which trunk?"));
    assert_eq!(s.metadata.fallback, None);
}

#[test]
fn intent_sim_falls_back_without_question() {
    let f = Fixture::new(json!({"rules": [{"greedy": "", "samples": ["Answer: 1.", "Answer: 2."]}]}));
    let s = f.ctx().score(Method::IntentSim, &qa("v", "vague?")).unwrap();
    assert_eq!(s.method, Method::IntentSim);
    assert_eq!(s.metadata.fallback, Some(Method::SemanticEntropy));
    assert!((s.value - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn scores_are_repeatable() {
    let script = json!({"rules": [{"pool": ["Answer: a.", "Answer: b.", "Answer: c.", "Answer: a."]}]});
    let a = Fixture::new(script.clone());
    let b = Fixture::new(script);
    let x = qa("r", "q?");
    for m in Method::ALL {
        if m == Method::SelfAsk {
            continue;
        }
        let sa = a.ctx().score(m, &x).unwrap();
        let sb = b.ctx().score(m, &x).unwrap();
        assert_eq!(sa.value.to_bits(), sb.value.to_bits(), "{m}");
    }
}

#[test]
fn random_scores_depend_on_seed_and_id() {
    let x = qa("a", "q");
    let y = qa("b", "q");
    let s = random_score(1, &x).value;
    assert!((0.0..1.0).contains(&s));
    assert_eq!(s, random_score(1, &x).value);
    assert_ne!(s, random_score(2, &x).value);
    assert_ne!(s, random_score(1, &y).value);
}

#[test]
fn config_validation() {
    assert!(EstimatorConfig::default().validate().is_ok());
    assert!(EstimatorConfig { samples: 1, ..Default::default() }.validate().is_err());
    assert!(EstimatorConfig { temperature: 0.0, ..Default::default() }.validate().is_err());
}

#[test]
fn method_names_round_trip() {
    for m in Method::ALL {
        assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        assert_eq!(serde_json::to_value(m).unwrap(), json!(m.as_str()));
    }
    assert_eq!("Intent-Sim".parse::<Method>().unwrap(), Method::IntentSim);
    assert!("entropy".parse::<Method>().is_err());
}

#[test]
fn scores_jsonl_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scores.jsonl");
    let mut s = UncertaintyScore::new("a", Method::SemanticEntropy, 0.25);
    s.metadata.cluster_sizes = Some(vec![3, 1]);
    let scores = vec![s, UncertaintyScore::new("b", Method::Random, 0.5)];
    write_scores(&path, &scores).unwrap();
    assert_eq!(read_scores(&path).unwrap(), scores);
}
