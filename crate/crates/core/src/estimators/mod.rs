//! Uncertainty scores u(x) for deciding when to clarify; larger means the
//! example should be clarified sooner.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AmbiguousExample, TaskKind};
use crate::equivalence::{
    cluster_by_key, connected_components, responses_equivalent, ClusterDistribution, EquivalenceGraph, Judge,
};
use crate::gateway::{ChatMessage, CompletionRequest, Gateway, GatewayError};
use crate::prompting::{select_exemplars, ExemplarPool, Extras, Parsed, PromptBook, PromptError, PromptVariant};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Likelihood,
    SelfAsk,
    SemanticEntropy,
    IntentSim,
    /// Seeded uniform scores; the reference every estimator should beat.
    Random,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Random,
        Method::Likelihood,
        Method::SelfAsk,
        Method::SemanticEntropy,
        Method::IntentSim,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Likelihood => "likelihood",
            Method::SelfAsk => "self_ask",
            Method::SemanticEntropy => "semantic_entropy",
            Method::IntentSim => "intent_sim",
            Method::Random => "random",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Method::Likelihood => "Likelihood",
            Method::SelfAsk => "Self-Ask",
            Method::SemanticEntropy => "Semantic Entropy",
            Method::IntentSim => "Intent-Sim",
            Method::Random => "Random",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == key)
            .ok_or_else(|| format!("unknown estimator `{s}`"))
    }
}

/// How a Self-Ask probability was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbabilitySource {
    ForcedScoring,
    /// Frequency over temperature-1 samples; low precision.
    SamplingFallback,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_sizes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprob_sum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unparseable_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_no: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probability_source: Option<ProbabilitySource>,
    /// Set when Intent-Sim degraded to semantic entropy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<Method>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScore {
    pub example_id: String,
    pub method: Method,
    pub value: f64,
    #[serde(default)]
    pub metadata: ScoreMetadata,
}

impl UncertaintyScore {
    pub fn new(example_id: impl Into<String>, method: Method, value: f64) -> Self {
        Self { example_id: example_id.into(), method, value, metadata: ScoreMetadata::default() }
    }
}

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("empty greedy completion for `{0}`")]
    EmptyCompletion(String),
    #[error("invalid estimator config: {0}")]
    Config(String),
    #[error("{method} produced non-finite score {value} for `{id}`")]
    NonFinite { id: String, method: Method, value: f64 },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl EstimatorError {
    pub fn is_transport(&self) -> bool {
        match self {
            EstimatorError::Gateway(g) | EstimatorError::Prompt(PromptError::Gateway(g)) => g.is_transport(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Samples per example (S).
    pub samples: usize,
    /// Sampling temperature (T).
    pub temperature: f64,
    pub seed: u64,
    /// Few-shot exemplars per prompt.
    pub exemplars: usize,
    /// Sample count for the Self-Ask fallback at temperature 1.
    pub fallback_samples: usize,
    /// Allow the Self-Ask sampling fallback on backends without scoring.
    pub sampling_fallback: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            samples: 10,
            temperature: 0.5,
            seed: 0,
            exemplars: 4,
            fallback_samples: 20,
            sampling_fallback: true,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        if self.samples < 2 {
            return Err(EstimatorError::Config(format!("samples must be >= 2, got {}", self.samples)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(EstimatorError::Config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if self.fallback_samples == 0 {
            return Err(EstimatorError::Config("fallback_samples must be >= 1".into()));
        }
        Ok(())
    }
}

/// Token limits per generated turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeLimits {
    pub answer: u32,
    pub question: u32,
    pub response: u32,
    pub oracle: u32,
}

impl DecodeLimits {
    pub fn for_task(task: TaskKind) -> Self {
        let answer = match task {
            TaskKind::Qa => 32,
            TaskKind::Nli => 8,
            TaskKind::Mt => 96,
        };
        Self { answer, question: 48, response: 48, oracle: 384 }
    }
}

impl Default for DecodeLimits {
    fn default() -> Self {
        Self::for_task(TaskKind::Qa)
    }
}

/// Everything an estimator needs; shared read-only across workers.
pub struct EstimatorContext<'a> {
    pub gateway: &'a Gateway,
    pub judge: &'a dyn Judge,
    pub book: &'a PromptBook,
    pub pool: &'a ExemplarPool,
    pub config: &'a EstimatorConfig,
    pub limits: DecodeLimits,
}

impl EstimatorContext<'_> {
    pub fn example_seed(&self, example: &AmbiguousExample) -> u64 {
        seed::derive(self.config.seed, &example.id)
    }

    fn prompt(
        &self,
        variant: PromptVariant,
        example: &AmbiguousExample,
        extras: Extras<'_>,
    ) -> Result<Vec<ChatMessage>, EstimatorError> {
        let exemplars = select_exemplars(self.pool, variant, self.config.exemplars, self.example_seed(example))?;
        Ok(self.book.build_prompt(variant, &exemplars, example, extras)?)
    }

    fn request(&self, messages: Vec<ChatMessage>, max_tokens: u32, example: &AmbiguousExample) -> CompletionRequest {
        CompletionRequest::greedy(messages, max_tokens, self.example_seed(example))
    }

    pub fn score(&self, method: Method, example: &AmbiguousExample) -> Result<UncertaintyScore, EstimatorError> {
        let s = match method {
            Method::Likelihood => likelihood_score(self, example),
            Method::SelfAsk => self_ask_score(self, example),
            Method::SemanticEntropy => semantic_entropy_score(self, example),
            Method::IntentSim => intent_sim_score(self, example),
            Method::Random => Ok(random_score(self.config.seed, example)),
        }?;
        if !s.value.is_finite() {
            return Err(EstimatorError::NonFinite { id: example.id.clone(), method, value: s.value });
        }
        Ok(s)
    }
}

/// Length-normalized negative log-likelihood of the greedy Direct answer.
pub fn likelihood_score(ctx: &EstimatorContext<'_>, example: &AmbiguousExample) -> Result<UncertaintyScore, EstimatorError> {
    let prompt = ctx.prompt(PromptVariant::Direct, example, Extras::default())?;
    let c = ctx.gateway.greedy_complete(&ctx.request(prompt, ctx.limits.answer, example))?;
    if c.token_logprobs.is_empty() {
        return Err(EstimatorError::EmptyCompletion(example.id.clone()));
    }
    let sum = c.logprob_sum();
    let value = -sum / c.token_logprobs.len() as f64;
    let mut s = UncertaintyScore::new(example.id.clone(), Method::Likelihood, value);
    s.metadata.logprob_sum = Some(sum);
    s.metadata.completion = Some(c.text);
    s.metadata.token_logprobs = Some(c.token_logprobs);
    Ok(s)
}

/// `1 − P(" No")` after the Self-Ask question.
pub fn self_ask_score(ctx: &EstimatorContext<'_>, example: &AmbiguousExample) -> Result<UncertaintyScore, EstimatorError> {
    let prompt = ctx.prompt(PromptVariant::SelfAsk, example, Extras::default())?;
    let continuation = ctx.book.self_ask_continuation(example.task);
    let (p_no, source, sum) = match ctx.gateway.score_continuation(&prompt, continuation) {
        Ok(lp) => (lp.exp().clamp(0.0, 1.0), ProbabilitySource::ForcedScoring, Some(lp)),
        Err(GatewayError::UnsupportedCapability(what)) if ctx.config.sampling_fallback => {
            tracing::debug!(id = %example.id, %what, "self-ask falling back to sampling");
            let n = ctx.config.fallback_samples;
            let samples = ctx
                .gateway
                .sample_completions(&ctx.request(prompt, ctx.limits.answer, example), n, 1.0)?;
            let no = samples
                .iter()
                .filter(|c| {
                    matches!(
                        ctx.book.parse(PromptVariant::SelfAsk, example.task, &c.text),
                        Ok(Parsed::FollowUpNeeded(false))
                    )
                })
                .count();
            (no as f64 / n as f64, ProbabilitySource::SamplingFallback, None)
        }
        Err(e) => return Err(e.into()),
    };
    let mut s = UncertaintyScore::new(example.id.clone(), Method::SelfAsk, 1.0 - p_no);
    s.metadata.p_no = Some(p_no);
    s.metadata.probability_source = Some(source);
    s.metadata.logprob_sum = sum;
    if source == ProbabilitySource::SamplingFallback {
        s.metadata.sample_count = Some(ctx.config.fallback_samples);
    }
    Ok(s)
}

fn clustered(
    example: &AmbiguousExample,
    method: Method,
    samples: Vec<String>,
    parsed: &[Option<Parsed>],
    clusters: Vec<Vec<usize>>,
) -> UncertaintyScore {
    let dist = ClusterDistribution::from_clusters(clusters);
    let mut s = UncertaintyScore::new(example.id.clone(), method, dist.entropy());
    s.metadata.sample_count = Some(samples.len());
    s.metadata.cluster_sizes = Some(dist.sizes());
    s.metadata.unparseable_samples = Some(parsed.iter().filter(|p| p.is_none()).count());
    s.metadata.samples = Some(samples);
    s
}

/// Groups parsed items with the judge on `question ⊕ text`; unparseable
/// items stay singletons.
fn judge_clusters(
    judge: &dyn Judge,
    question: &str,
    parsed: &[Option<Parsed>],
) -> Result<Vec<Vec<usize>>, GatewayError> {
    let texts: Vec<Option<String>> = parsed.iter().map(|p| p.as_ref().map(Parsed::text)).collect();
    let graph = EquivalenceGraph::from_relation(texts.len(), |i, j| match (&texts[i], &texts[j]) {
        (Some(a), Some(b)) => responses_equivalent(judge, question, a, b),
        _ => Ok(false),
    })?;
    Ok(connected_components(&graph))
}

/// Entropy over equivalence clusters of S sampled Direct outputs.
pub fn semantic_entropy_score(
    ctx: &EstimatorContext<'_>,
    example: &AmbiguousExample,
) -> Result<UncertaintyScore, EstimatorError> {
    let prompt = ctx.prompt(PromptVariant::Direct, example, Extras::default())?;
    let draws = ctx.gateway.sample_completions(
        &ctx.request(prompt, ctx.limits.answer, example),
        ctx.config.samples,
        ctx.config.temperature,
    )?;
    let parsed: Vec<Option<Parsed>> = draws
        .iter()
        .map(|c| ctx.book.parse(PromptVariant::Direct, example.task, &c.text).ok())
        .collect();
    let clusters = match example.task {
        TaskKind::Qa => judge_clusters(ctx.judge, &example.input, &parsed)?,
        TaskKind::Nli | TaskKind::Mt => {
            cluster_by_key(&parsed.iter().map(|p| p.as_ref().map(Parsed::match_key)).collect::<Vec<_>>())
        }
    };
    let samples = draws.into_iter().map(|c| c.text).collect();
    Ok(clustered(example, Method::SemanticEntropy, samples, &parsed, clusters))
}

/// Entropy over simulated user intents: greedily ask a clarifying question,
/// sample S user answers, cluster the question-answer pairs.
pub fn intent_sim_score(ctx: &EstimatorContext<'_>, example: &AmbiguousExample) -> Result<UncertaintyScore, EstimatorError> {
    let ask = ctx.prompt(PromptVariant::IntentSimQuestion, example, Extras::default())?;
    let q = ctx.gateway.greedy_complete(&ctx.request(ask, ctx.limits.question, example))?;
    let question = match ctx.book.parse(PromptVariant::IntentSimQuestion, example.task, &q.text) {
        Ok(Parsed::Question(question)) => question,
        _ => {
            tracing::warn!(id = %example.id, text = %q.text, "unparseable clarifying question; using semantic entropy");
            let mut s = semantic_entropy_score(ctx, example)?;
            s.method = Method::IntentSim;
            s.metadata.fallback = Some(Method::SemanticEntropy);
            s.metadata.question = Some(q.text);
            return Ok(s);
        }
    };
    let answer_prompt = ctx.prompt(
        PromptVariant::IntentSimAnswer,
        example,
        Extras { question: Some(&question), ..Default::default() },
    )?;
    let draws = ctx.gateway.sample_completions(
        &ctx.request(answer_prompt, ctx.limits.response, example),
        ctx.config.samples,
        ctx.config.temperature,
    )?;
    let parsed: Vec<Option<Parsed>> = draws
        .iter()
        .map(|c| ctx.book.parse(PromptVariant::IntentSimAnswer, example.task, &c.text).ok())
        .collect();
    let clusters = judge_clusters(ctx.judge, &question, &parsed)?;
    let samples = draws.into_iter().map(|c| c.text).collect();
    let mut s = clustered(example, Method::IntentSim, samples, &parsed, clusters);
    s.metadata.question = Some(question);
    Ok(s)
}

/// Uniform score in [0, 1) drawn from the run seed and the example id.
pub fn random_score(run_seed: u64, example: &AmbiguousExample) -> UncertaintyScore {
    let s = seed::derive(seed::derive(run_seed, &example.id), "random");
    let value: f64 = ChaCha8Rng::seed_from_u64(s).random();
    UncertaintyScore::new(example.id.clone(), Method::Random, value)
}

pub fn write_scores(path: &Path, scores: &[UncertaintyScore]) -> Result<(), EstimatorError> {
    let io = |e: std::io::Error| EstimatorError::Io { path: path.display().to_string(), message: e.to_string() };
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    for s in scores {
        serde_json::to_writer(&mut f, s).expect("score serializes");
        f.write_all(b"\n").map_err(io)?;
    }
    f.flush().map_err(io)
}

pub fn read_scores(path: &Path) -> Result<Vec<UncertaintyScore>, EstimatorError> {
    let fail = |message: String| EstimatorError::Io { path: path.display().to_string(), message };
    let f = fs::File::open(path).map_err(|e| fail(e.to_string()))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| fail(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| fail(format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
