//! Per-example performance under the Direct, Follow and Disambig settings.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use clarify_core::corpus::{weight_intents, CorpusError, IntentWeighting};
use clarify_core::estimators::EstimatorError;
use clarify_core::gateway::GatewayError;
use clarify_core::metrics::{answer_recall, contrastive_item_score, nli_item_score, ExampleOutcome};
use clarify_core::prompting::{select_exemplars, Extras, Parsed, PromptError};
use clarify_core::{seed, AmbiguousExample, ChatMessage, CompletionRequest, PromptVariant, TaskKind, WeightingMode};

use crate::error::{is_transport_estimator, is_transport_gateway, is_transport_prompt, CliError};
use crate::runtime::Runtime;

/// Score of one interpretation under one setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub interpretation: usize,
    pub messages: Vec<ChatMessage>,
    /// Absent for MT, which is scored by likelihood rather than generation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed: Option<Parsed>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub example_id: String,
    pub variant: PromptVariant,
    pub items: Vec<ItemRecord>,
    /// Intent-weighted performance per weighting mode.
    pub performance: BTreeMap<WeightingMode, f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleFailure {
    pub example_id: String,
    pub stage: String,
    pub reason: String,
}

/// A per-example problem: either recorded and skipped, or fatal to the run.
#[derive(Debug)]
pub(crate) enum StepError {
    Fatal(CliError),
    Failed(String),
}

impl From<GatewayError> for StepError {
    fn from(e: GatewayError) -> Self {
        if is_transport_gateway(&e) {
            StepError::Fatal(CliError::Transport(e.to_string()))
        } else {
            StepError::Failed(e.to_string())
        }
    }
}

impl From<PromptError> for StepError {
    fn from(e: PromptError) -> Self {
        if is_transport_prompt(&e) {
            StepError::Fatal(CliError::Transport(e.to_string()))
        } else {
            StepError::Failed(e.to_string())
        }
    }
}

impl From<EstimatorError> for StepError {
    fn from(e: EstimatorError) -> Self {
        if is_transport_estimator(&e) {
            StepError::Fatal(CliError::Transport(e.to_string()))
        } else {
            StepError::Failed(e.to_string())
        }
    }
}

impl From<CorpusError> for StepError {
    fn from(e: CorpusError) -> Self {
        StepError::Failed(e.to_string())
    }
}

/// Splits step results into successes and failure records, stopping at the
/// first fatal error in input order.
pub(crate) fn partition<T>(
    results: Vec<(String, Result<T, StepError>)>,
    stage: &str,
) -> Result<(Vec<T>, Vec<ExampleFailure>), CliError> {
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok(v) => ok.push(v),
            Err(StepError::Fatal(e)) => return Err(e),
            Err(StepError::Failed(reason)) => {
                tracing::warn!(id = %id, stage, %reason, "example failed");
                failures.push(ExampleFailure { example_id: id, stage: stage.to_owned(), reason });
            }
        }
    }
    Ok((ok, failures))
}

fn item_score(
    rt: &Runtime,
    example: &AmbiguousExample,
    variant: PromptVariant,
    messages: &[ChatMessage],
    completion: Option<&str>,
    i: usize,
) -> Result<(Option<Parsed>, f64), StepError> {
    let output = &example.interpretations[i].output;
    Ok(match example.task {
        TaskKind::Mt => (None, contrastive_item_score(&rt.gateway, messages, example, i)? as f64),
        TaskKind::Qa => {
            let parsed = rt.book.parse(variant, example.task, completion.unwrap_or("")).ok();
            let text = parsed.as_ref().map(Parsed::text).unwrap_or_default();
            let golds = output.answers().unwrap_or(&[]);
            (parsed, answer_recall(&text, golds) as f64)
        }
        TaskKind::Nli => {
            let parsed = rt.book.parse(variant, example.task, completion.unwrap_or("")).ok();
            let predicted = match &parsed {
                Some(Parsed::Label(l)) => Some(*l),
                _ => None,
            };
            let gold = output.label().ok_or_else(|| StepError::Failed(format!("`{}` has no label {i}", example.id)))?;
            (parsed, nli_item_score(predicted, gold) as f64)
        }
    })
}

/// Scores `variant` on each interpretation in `indices`. Direct prompts do
/// not depend on the interpretation, so they are generated once.
pub(crate) fn evaluate_items(
    rt: &Runtime,
    example: &AmbiguousExample,
    variant: PromptVariant,
    indices: &[usize],
) -> Result<Vec<ItemRecord>, StepError> {
    let seed = seed::derive(rt.config.seed, &example.id);
    let exemplars = select_exemplars(&rt.pool, variant, rt.config.estimator.exemplars, seed)?;
    let mut shared: Option<(Vec<ChatMessage>, Option<String>)> = None;
    let mut items = Vec::with_capacity(indices.len());
    for &i in indices {
        let (messages, completion) = match (&shared, variant) {
            (Some(s), PromptVariant::Direct) => s.clone(),
            _ => {
                let extras = match variant {
                    PromptVariant::Follow => {
                        let exchange = example
                            .exchange
                            .as_ref()
                            .ok_or_else(|| StepError::Failed(format!("`{}` has no clarifying exchange", example.id)))?;
                        Extras {
                            clarification: Some((&exchange.question, &exchange.answers[i])),
                            ..Default::default()
                        }
                    }
                    PromptVariant::Disambig => Extras { interpretation: Some(i), ..Default::default() },
                    _ => Extras::default(),
                };
                let messages = rt.book.build_prompt(variant, &exemplars, example, extras)?;
                let completion = match example.task {
                    TaskKind::Mt => None,
                    _ => {
                        let request = CompletionRequest::greedy(messages.clone(), rt.config.limits.answer, seed);
                        Some(rt.gateway.greedy_complete(&request)?.text)
                    }
                };
                shared = Some((messages.clone(), completion.clone()));
                (messages, completion)
            }
        };
        let (parsed, score) = item_score(rt, example, variant, &messages, completion.as_deref(), i)?;
        items.push(ItemRecord { interpretation: i, messages, completion, parsed, score });
    }
    Ok(items)
}

fn weighted(weighting: &IntentWeighting, items: &[ItemRecord]) -> f64 {
    weighting
        .support()
        .map(|(i, w)| {
            let item = items.iter().find(|it| it.interpretation == i).expect("scored every supported interpretation");
            w * item.score
        })
        .sum()
}

/// One record per variant, each carrying performance under every mode.
pub(crate) fn evaluate_example(
    rt: &Runtime,
    example: &AmbiguousExample,
    variants: &[PromptVariant],
    modes: &[WeightingMode],
) -> Result<Vec<ResponseRecord>, StepError> {
    let weightings: Vec<(WeightingMode, IntentWeighting)> = modes
        .iter()
        .map(|&m| weight_intents(example, m).map(|w| (m, w)))
        .collect::<Result<_, _>>()?;
    let indices: Vec<usize> = weightings
        .iter()
        .flat_map(|(_, w)| w.support().map(|(i, _)| i))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    variants
        .iter()
        .map(|&variant| {
            let items = evaluate_items(rt, example, variant, &indices)?;
            let performance = weightings.iter().map(|(m, w)| (*m, weighted(w, &items))).collect();
            Ok(ResponseRecord { example_id: example.id.clone(), variant, items, performance })
        })
        .collect()
}

/// Direct and clarified performance for the when-to-clarify pool. The
/// clarified setting is Follow with the oracle exchange; unambiguous
/// examples keep their Direct performance.
pub(crate) fn example_outcome(
    rt: &Runtime,
    example: &AmbiguousExample,
) -> Result<(ExampleOutcome, Vec<ResponseRecord>), StepError> {
    let mode = rt.config.outcome_weighting;
    if !example.is_ambiguous {
        let records = evaluate_example(rt, example, &[PromptVariant::Direct], &[mode])?;
        let perf = records[0].performance[&mode];
        return Ok((ExampleOutcome::unambiguous(example.id.clone(), perf), records));
    }
    if example.exchange.is_none() {
        return Err(StepError::Failed("ambiguous example has no clarifying exchange".into()));
    }
    let records = evaluate_example(rt, example, &[PromptVariant::Direct, PromptVariant::Follow], &[mode])?;
    let outcome = ExampleOutcome::new(
        example.id.clone(),
        records[0].performance[&mode],
        records[1].performance[&mode],
    );
    Ok((outcome, records))
}

/// Why an example cannot be evaluated under `variants`, if it cannot.
pub(crate) fn missing_material(example: &AmbiguousExample, variants: &[PromptVariant]) -> Option<Missing> {
    if variants.contains(&PromptVariant::Follow) && example.exchange.is_none() {
        return Some(Missing::Exchange);
    }
    if variants.contains(&PromptVariant::Disambig) {
        let present = example.interpretations.iter().all(|i| match example.task {
            TaskKind::Mt => i.context.is_some(),
            _ => i.disambiguated_input.is_some(),
        });
        if !present {
            return Some(Missing::Disambiguation);
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Missing {
    Exchange,
    Disambiguation,
}
