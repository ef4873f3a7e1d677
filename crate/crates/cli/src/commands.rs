use std::collections::HashMap;
use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use clarify_core::corpus::adapters::{convert, SourceFormat};
use clarify_core::corpus::write_corpus;
use clarify_core::estimators::UncertaintyScore;
use clarify_core::metrics::{build_budget_report, mean, ExampleOutcome};
use clarify_core::prompting::generate_oracle_clarification;
use clarify_core::{seed, AmbiguousExample, Pool, PromptVariant};

use crate::artifacts::{ArtifactWriter, Metadata};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::eval::{evaluate_example, example_outcome, missing_material, partition, ExampleFailure, Missing, StepError};
use crate::report::{
    load_report, ClarificationSummary, Report, ResponsivenessCell, ResponsivenessReport, WhenToClarifyReport,
};
use crate::runtime::Runtime;

/// What a command leaves behind.
#[derive(Debug, Clone)]
pub struct RunArtifact {
    pub dir: PathBuf,
    pub report: Report,
    pub failures: Vec<ExampleFailure>,
}

fn start(rt: &Runtime) -> Result<ArtifactWriter, CliError> {
    let w = ArtifactWriter::create(&rt.config.output_dir)?;
    w.json("config.json", &rt.config)?;
    Ok(w)
}

fn metadata(rt: &Runtime, command: &str, failures: usize, notes: Vec<String>) -> Metadata {
    Metadata {
        tool_version: crate::report::TOOL_VERSION.to_owned(),
        command: command.to_owned(),
        backend: rt.gateway.backend_id().to_owned(),
        judge: rt.judge.id(),
        examples: rt.corpus.len(),
        failures,
        notes,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ClarificationStatus {
    Unambiguous,
    AlreadyPresent,
    Attached,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClarificationRecord {
    example_id: String,
    status: ClarificationStatus,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
}

/// Attaches an oracle exchange to every ambiguous example that lacks one and
/// writes the corpus back out as `corpus.jsonl`.
pub fn cmd_generate_clarifications(config: RunConfig) -> Result<RunArtifact, CliError> {
    let rt = Runtime::new(config)?;
    let w = start(&rt)?;
    if rt.corpus.is_empty() {
        tracing::warn!(corpus = %rt.config.corpus.display(), "corpus is empty");
    }
    let results = rt.par_map(&rt.corpus, |e| {
        if !e.is_ambiguous {
            return (e.id.clone(), Ok((e.clone(), ClarificationStatus::Unambiguous, Vec::new())));
        }
        if e.exchange.is_some() {
            return (e.id.clone(), Ok((e.clone(), ClarificationStatus::AlreadyPresent, Vec::new())));
        }
        let seed = seed::derive(rt.config.seed, &e.id);
        let r = generate_oracle_clarification(&rt.gateway, &rt.book, e, seed, rt.config.limits.oracle)
            .map_err(StepError::from)
            .map(|o| {
                let mut attached = e.clone();
                attached.exchange = Some(o.exchange);
                (attached, ClarificationStatus::Attached, o.warnings)
            });
        (e.id.clone(), r)
    });
    let ids: Vec<String> = results.iter().map(|(id, _)| id.clone()).collect();
    let (done, failures) = partition(results, "oracle")?;
    let mut by_id: HashMap<String, (AmbiguousExample, ClarificationStatus, Vec<String>)> =
        done.into_iter().map(|d| (d.0.id.clone(), d)).collect();

    let mut corpus = Vec::with_capacity(ids.len());
    let mut records = Vec::with_capacity(ids.len());
    for (id, original) in ids.iter().zip(&rt.corpus) {
        match by_id.remove(id) {
            Some((example, status, warnings)) => {
                corpus.push(example);
                records.push(ClarificationRecord { example_id: id.clone(), status, warnings });
            }
            None => {
                corpus.push(original.clone());
                records.push(ClarificationRecord {
                    example_id: id.clone(),
                    status: ClarificationStatus::Failed,
                    warnings: Vec::new(),
                });
            }
        }
    }
    let count = |f: fn(&ClarificationStatus) -> bool| records.iter().filter(|r| f(&r.status)).count();
    let summary = ClarificationSummary {
        task: rt.config.task,
        examples: rt.corpus.len(),
        ambiguous: rt.corpus.iter().filter(|e| e.is_ambiguous).count(),
        already_present: count(|s| matches!(s, ClarificationStatus::AlreadyPresent)),
        attached: count(|s| matches!(s, ClarificationStatus::Attached)),
        failed: failures.len(),
        warnings: records.iter().map(|r| r.warnings.len()).sum(),
    };
    let out = w.dir().join("corpus.jsonl");
    write_corpus(&out, &corpus).map_err(|e| CliError::io(&out, e))?;
    w.jsonl("records.jsonl", &records)?;
    w.jsonl("failures.jsonl", &failures)?;
    w.json("metadata.json", &metadata(&rt, "generate-clarifications", failures.len(), Vec::new()))?;
    let report = Report::Clarifications(summary);
    w.report(&report)?;
    let dir = w.finish(rt.gateway.stats())?;
    Ok(RunArtifact { dir, report, failures })
}

/// Direct, Follow and Disambig performance on the ambiguous examples, in
/// every configured weighting mode.
pub fn cmd_responsiveness(config: RunConfig) -> Result<RunArtifact, CliError> {
    let rt = Runtime::new(config)?;
    let w = start(&rt)?;
    let variants = rt.config.variants.clone();
    let modes = rt.config.weighting.clone();

    let mut eligible = Vec::new();
    let (mut unambiguous, mut no_exchange, mut no_disambiguation) = (0, 0, 0);
    for e in &rt.corpus {
        if !e.is_ambiguous {
            unambiguous += 1;
            continue;
        }
        match missing_material(e, &variants) {
            Some(Missing::Exchange) => no_exchange += 1,
            Some(Missing::Disambiguation) => no_disambiguation += 1,
            None => eligible.push(e.clone()),
        }
    }
    if no_exchange > 0 {
        tracing::warn!(count = no_exchange, "examples without a clarifying exchange were skipped");
    }
    let results = rt.par_map(&eligible, |e| (e.id.clone(), evaluate_example(&rt, e, &variants, &modes)));
    let (done, failures) = partition(results, "responsiveness")?;
    let records: Vec<_> = done.into_iter().flatten().collect();

    let cells = variants
        .iter()
        .flat_map(|&variant| {
            let records = &records;
            modes.iter().map(move |&mode| {
                let values: Vec<f64> = records
                    .iter()
                    .filter(|r| r.variant == variant)
                    .map(|r| r.performance[&mode])
                    .collect();
                ResponsivenessCell { variant, mode, performance: if values.is_empty() { 0.0 } else { mean(&values) } }
            })
        })
        .collect();
    let report = Report::Responsiveness(ResponsivenessReport {
        task: rt.config.task,
        variants: variants.clone(),
        modes: modes.clone(),
        evaluated: eligible.len() - failures.len(),
        skipped_unambiguous: unambiguous,
        skipped_missing_exchange: no_exchange,
        skipped_missing_disambiguation: no_disambiguation,
        failed: failures.len(),
        cells,
    });
    w.jsonl("records.jsonl", &records)?;
    w.jsonl("failures.jsonl", &failures)?;
    w.json("metadata.json", &metadata(&rt, "responsiveness", failures.len(), Vec::new()))?;
    w.report(&report)?;
    let dir = w.finish(rt.gateway.stats())?;
    Ok(RunArtifact { dir, report, failures })
}

fn read_outcomes(path: &Path) -> Result<HashMap<String, ExampleOutcome>, CliError> {
    let f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = HashMap::new();
    for (n, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let o: ExampleOutcome =
            serde_json::from_str(&line).map_err(|e| CliError::io(path, format!("line {}: {e}", n + 1)))?;
        out.insert(o.example_id.clone(), o);
    }
    Ok(out)
}

/// Scores every pool example with each estimator and evaluates the scores
/// against shared improvement outcomes.
pub fn cmd_when_to_clarify(config: RunConfig) -> Result<RunArtifact, CliError> {
    let rt = Runtime::new(config)?;
    let w = start(&rt)?;
    let pool: Vec<AmbiguousExample> = rt
        .corpus
        .iter()
        .filter(|e| rt.config.pool == Pool::Full || e.is_ambiguous)
        .cloned()
        .collect();
    let loaded = rt.config.outcomes.as_deref().map(read_outcomes).transpose()?;
    let ctx = rt.estimator_context();
    let methods = rt.config.estimators.clone();

    let results = rt.par_map(&pool, |e| {
        let step = || -> Result<_, StepError> {
            let (outcome, records) = match &loaded {
                Some(map) => {
                    let o = map
                        .get(&e.id)
                        .cloned()
                        .ok_or_else(|| StepError::Failed("no outcome in the supplied outcomes file".into()))?;
                    (o, Vec::new())
                }
                None => example_outcome(&rt, e)?,
            };
            let scores: Vec<UncertaintyScore> =
                methods.iter().map(|&m| ctx.score(m, e)).collect::<Result<_, _>>()?;
            Ok((outcome, records, scores))
        };
        (e.id.clone(), step())
    });
    let (done, failures) = partition(results, "when_to_clarify")?;

    let outcomes: Vec<ExampleOutcome> = done.iter().map(|d| d.0.clone()).collect();
    let records: Vec<_> = done.iter().flat_map(|d| d.1.iter().cloned()).collect();
    let mut reports = Vec::with_capacity(methods.len());
    let mut all_scores = Vec::new();
    for (k, &method) in methods.iter().enumerate() {
        let scores: Vec<UncertaintyScore> = done.iter().map(|d| d.2[k].clone()).collect();
        if !outcomes.is_empty() {
            let report = build_budget_report(method.display_name(), rt.config.pool, &scores, &outcomes, &rt.config.budgets)
                .map_err(|e| CliError::Run(format!("{method}: {e}")))?;
            reports.push(report);
        }
        all_scores.extend(scores);
    }
    if outcomes.is_empty() {
        tracing::warn!("no example could be evaluated; the report is empty");
    }
    let outcome_source = match &rt.config.outcomes {
        Some(p) => format!("loaded from {}", p.display()),
        None => "greedy Direct vs Follow completions, shared by all estimators".to_owned(),
    };
    let report = Report::WhenToClarify(WhenToClarifyReport {
        task: rt.config.task,
        pool: rt.config.pool,
        pool_size: outcomes.len(),
        excluded: failures.len(),
        outcome_weighting: rt.config.outcome_weighting,
        outcome_source,
        budgets: rt.config.budgets.clone(),
        methods: reports,
    });
    let notes = vec![
        "outcomes are computed once per run and reused by every estimator".to_owned(),
        format!("clarified setting: {}", PromptVariant::Follow.display_name()),
    ];
    w.jsonl("records.jsonl", &records)?;
    w.jsonl("outcomes.jsonl", &outcomes)?;
    w.jsonl("scores.jsonl", &all_scores)?;
    w.jsonl("failures.jsonl", &failures)?;
    w.json("metadata.json", &metadata(&rt, "when-to-clarify", failures.len(), notes))?;
    w.report(&report)?;
    let dir = w.finish(rt.gateway.stats())?;
    Ok(RunArtifact { dir, report, failures })
}

/// Re-renders a stored report.
pub fn cmd_report(path: &Path, json: bool) -> Result<String, CliError> {
    let file = load_report(path)?;
    Ok(if json {
        let mut s = serde_json::to_string_pretty(&file).expect("report serializes");
        s.push('\n');
        s
    } else {
        file.report.render()
    })
}

/// Converts a published dataset layout into the unified corpus format. The
/// drop log is written next to the output.
pub fn cmd_convert(input: &Path, format: SourceFormat, output: &Path) -> Result<(usize, usize), CliError> {
    let converted = convert(input, format).map_err(|e| CliError::Config(e.to_string()))?;
    converted.write(output).map_err(|e| CliError::io(output, e))?;
    Ok((converted.examples.len(), converted.dropped.len()))
}
