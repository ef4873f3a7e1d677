//! Ambiguity-annotated corpora in a unified JSONL format.
//!
//! Each line of a corpus file is one [`AmbiguousExample`]. Source adapters
//! for the published AmbigQA, AmbiEnt and DiscourseMT layouts live in
//! [`adapters`]; the intent matching rules they apply live in [`matching`].

pub mod adapters;
pub mod matching;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use matching::{match_nli_intent, match_qa_intent, MatchError};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: line {line}: field `{field}`: {message}")]
    Schema {
        path: String,
        line: usize,
        field: String,
        message: String,
    },
    #[error("{path}: line {line}: duplicate id `{id}`")]
    DuplicateId { path: String, line: usize, id: String },
    #[error("example `{0}` has no gold interpretation; sampled weighting needs one")]
    MissingGold(String),
    #[error("{mode} weighting is not supported for {task} examples")]
    ModeUnsupported { task: TaskKind, mode: WeightingMode },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Qa,
    Nli,
    Mt,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Qa, TaskKind::Nli, TaskKind::Mt];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Qa => "qa",
            TaskKind::Nli => "nli",
            TaskKind::Mt => "mt",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "qa" => Ok(TaskKind::Qa),
            "nli" => Ok(TaskKind::Nli),
            "mt" => Ok(TaskKind::Mt),
            other => Err(format!("unknown task `{other}` (expected qa, nli or mt)")),
        }
    }
}

/// Three-way NLI label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Entailment,
    Neutral,
    Contradiction,
}

impl NliLabel {
    pub const ALL: [NliLabel; 3] = [
        NliLabel::Entailment,
        NliLabel::Neutral,
        NliLabel::Contradiction,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NliLabel::Entailment => "entailment",
            NliLabel::Neutral => "neutral",
            NliLabel::Contradiction => "contradiction",
        }
    }
}

impl fmt::Display for NliLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NliLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "entailment" | "e" => Ok(NliLabel::Entailment),
            "neutral" | "n" => Ok(NliLabel::Neutral),
            "contradiction" | "c" => Ok(NliLabel::Contradiction),
            other => Err(format!("unknown NLI label `{other}`")),
        }
    }
}

/// Output of one interpretation; its shape is fixed by the task.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum TaskOutput {
    /// QA: every acceptable answer string.
    Answers(Vec<String>),
    /// NLI: the label under this reading.
    Label(NliLabel),
    /// MT: the target translation.
    Translation(String),
}

impl TaskOutput {
    fn from_json(task: TaskKind, value: &serde_json::Value) -> Result<Self, String> {
        use serde_json::Value;
        match (task, value) {
            (TaskKind::Qa, Value::Array(items)) => {
                let answers = items
                    .iter()
                    .map(|v| {
                        v.as_str()
                            .map(str::to_owned)
                            .ok_or_else(|| "QA answers must be strings".to_owned())
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                if answers.is_empty() {
                    return Err("QA answer list is empty".into());
                }
                Ok(TaskOutput::Answers(answers))
            }
            (TaskKind::Qa, Value::String(s)) => Ok(TaskOutput::Answers(vec![s.clone()])),
            (TaskKind::Nli, Value::String(s)) => s.parse().map(TaskOutput::Label),
            (TaskKind::Mt, Value::String(s)) if !s.trim().is_empty() => {
                Ok(TaskOutput::Translation(s.clone()))
            }
            (TaskKind::Mt, Value::String(_)) => Err("empty translation".into()),
            (task, other) => Err(format!("unexpected {task} output {other}")),
        }
    }

    pub fn answers(&self) -> Option<&[String]> {
        match self {
            TaskOutput::Answers(a) => Some(a),
            _ => None,
        }
    }

    pub fn label(&self) -> Option<NliLabel> {
        match self {
            TaskOutput::Label(l) => Some(*l),
            _ => None,
        }
    }

    pub fn translation(&self) -> Option<&str> {
        match self {
            TaskOutput::Translation(t) => Some(t),
            _ => None,
        }
    }

    fn matches(&self, task: TaskKind) -> bool {
        matches!(
            (task, self),
            (TaskKind::Qa, TaskOutput::Answers(_))
                | (TaskKind::Nli, TaskOutput::Label(_))
                | (TaskKind::Mt, TaskOutput::Translation(_))
        )
    }
}

/// One feasible reading of an input and the output it leads to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Interpretation {
    pub index: usize,
    /// QA/NLI: the disambiguated rewrite of the input.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disambiguated_input: Option<String>,
    /// MT: the preceding context sentence that fixes the reading.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    pub output: TaskOutput,
}

/// A clarifying question and one answer per interpretation, in index order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClarifyingExchange {
    pub question: String,
    pub answers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawExample")]
pub struct AmbiguousExample {
    pub id: String,
    pub task: TaskKind,
    pub input: String,
    pub interpretations: Vec<Interpretation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold_index: Option<usize>,
    pub is_ambiguous: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exchange: Option<ClarifyingExchange>,
}

impl AmbiguousExample {
    pub fn k(&self) -> usize {
        self.interpretations.len()
    }

    pub fn gold(&self) -> Option<&Interpretation> {
        self.gold_index.and_then(|i| self.interpretations.get(i))
    }

    /// Checks every structural invariant, reporting the first offending field.
    pub fn validate(&self) -> Result<(), FieldError> {
        if self.id.trim().is_empty() {
            return Err(FieldError::new("id", "empty id"));
        }
        if self.input.trim().is_empty() {
            return Err(FieldError::new("input", "empty input"));
        }
        let k = self.interpretations.len();
        if k == 0 {
            return Err(FieldError::new("interpretations", "no interpretations"));
        }
        if self.is_ambiguous != (k >= 2) {
            return Err(FieldError::new(
                "is_ambiguous",
                format!("is_ambiguous={} but {k} interpretation(s)", self.is_ambiguous),
            ));
        }
        if let Some(g) = self.gold_index {
            if g >= k {
                return Err(FieldError::new(
                    "gold_index",
                    format!("{g} out of range for {k} interpretations"),
                ));
            }
        }
        if !self.is_ambiguous && self.gold_index != Some(0) {
            return Err(FieldError::new(
                "gold_index",
                "unambiguous examples must have gold_index 0",
            ));
        }
        for (i, interp) in self.interpretations.iter().enumerate() {
            if interp.index != i {
                return Err(FieldError::new(
                    "interpretations",
                    format!("interpretation {i} carries index {}", interp.index),
                ));
            }
            if !interp.output.matches(self.task) {
                return Err(FieldError::new(
                    "interpretations",
                    format!("interpretation {i} output does not match task {}", self.task),
                ));
            }
            if self.is_ambiguous {
                match self.task {
                    TaskKind::Qa | TaskKind::Nli if interp.disambiguated_input.is_none() => {
                        return Err(FieldError::new(
                            "interpretations",
                            format!("interpretation {i} lacks disambiguated_input"),
                        ));
                    }
                    TaskKind::Mt if interp.context.is_none() => {
                        return Err(FieldError::new(
                            "interpretations",
                            format!("interpretation {i} lacks context"),
                        ));
                    }
                    _ => {}
                }
            }
        }
        if self.task == TaskKind::Nli {
            NliPair::parse(&self.input).map_err(|m| FieldError::new("input", m))?;
            for interp in &self.interpretations {
                if let Some(d) = &interp.disambiguated_input {
                    NliPair::parse(d).map_err(|m| FieldError::new("interpretations", m))?;
                }
            }
        }
        if let Some(ex) = &self.exchange {
            if ex.question.trim().is_empty() {
                return Err(FieldError::new("exchange", "empty clarifying question"));
            }
            if ex.answers.len() != k {
                return Err(FieldError::new(
                    "exchange",
                    format!("{} answers for {k} interpretations", ex.answers.len()),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Self {
            field: field.to_owned(),
            message: message.into(),
        }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "field `{}`: {}", self.field, self.message)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInterpretation {
    index: Option<usize>,
    disambiguated_input: Option<String>,
    context: Option<String>,
    output: Option<serde_json::Value>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExample {
    id: Option<String>,
    task: Option<TaskKind>,
    input: Option<String>,
    interpretations: Option<Vec<RawInterpretation>>,
    gold_index: Option<usize>,
    is_ambiguous: Option<bool>,
    exchange: Option<ClarifyingExchange>,
}

impl RawExample {
    fn into_example(self) -> Result<AmbiguousExample, FieldError> {
        let id = self.id.ok_or_else(|| FieldError::new("id", "missing"))?;
        let task = self.task.ok_or_else(|| FieldError::new("task", "missing"))?;
        let input = self.input.ok_or_else(|| FieldError::new("input", "missing"))?;
        let raw = self
            .interpretations
            .ok_or_else(|| FieldError::new("interpretations", "missing"))?;
        let mut interpretations = Vec::with_capacity(raw.len());
        for (i, r) in raw.into_iter().enumerate() {
            let value = r.output.ok_or_else(|| {
                FieldError::new("interpretations", format!("interpretation {i} missing output"))
            })?;
            let output = TaskOutput::from_json(task, &value)
                .map_err(|m| FieldError::new("interpretations", format!("interpretation {i}: {m}")))?;
            interpretations.push(Interpretation {
                index: r.index.unwrap_or(i),
                disambiguated_input: r.disambiguated_input,
                context: r.context,
                output,
            });
        }
        let is_ambiguous = self.is_ambiguous.unwrap_or(interpretations.len() >= 2);
        let example = AmbiguousExample {
            id,
            task,
            input,
            interpretations,
            gold_index: self.gold_index,
            is_ambiguous,
            exchange: self.exchange,
        };
        example.validate()?;
        Ok(example)
    }
}

impl TryFrom<RawExample> for AmbiguousExample {
    type Error = FieldError;

    fn try_from(raw: RawExample) -> Result<Self, Self::Error> {
        raw.into_example()
    }
}

/// Premise/hypothesis pair; stored in the unified format as
/// `"<premise>\n<hypothesis>"`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NliPair {
    pub premise: String,
    pub hypothesis: String,
}

impl NliPair {
    pub fn new(premise: impl Into<String>, hypothesis: impl Into<String>) -> Self {
        Self {
            premise: premise.into(),
            hypothesis: hypothesis.into(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let (p, h) = text
            .split_once('\n')
            .ok_or_else(|| "NLI text must be `premise\\nhypothesis`".to_owned())?;
        if p.trim().is_empty() || h.trim().is_empty() {
            return Err("NLI premise and hypothesis must be non-empty".into());
        }
        Ok(Self::new(p.trim(), h.trim()))
    }

    pub fn join(&self) -> String {
        format!("{}\n{}", self.premise, self.hypothesis)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightingMode {
    Sampled,
    Uniform,
}

impl fmt::Display for WeightingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightingMode::Sampled => "sampled",
            WeightingMode::Uniform => "uniform",
        })
    }
}

impl FromStr for WeightingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sampled" => Ok(WeightingMode::Sampled),
            "uniform" => Ok(WeightingMode::Uniform),
            other => Err(format!("unknown weighting mode `{other}`")),
        }
    }
}

/// Weights over an example's interpretations; the empirical stand-in for the
/// unannotated intent distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentWeighting {
    pub mode: WeightingMode,
    pub weights: Vec<f64>,
}

impl IntentWeighting {
    /// Interpretation indices with non-zero weight, paired with the weight.
    pub fn support(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, w)| w > 0.0)
    }
}

pub fn weight_intents(
    example: &AmbiguousExample,
    mode: WeightingMode,
) -> Result<IntentWeighting, CorpusError> {
    let k = example.k();
    if example.task == TaskKind::Mt && mode == WeightingMode::Sampled {
        return Err(CorpusError::ModeUnsupported {
            task: example.task,
            mode,
        });
    }
    if k == 1 {
        return Ok(IntentWeighting {
            mode,
            weights: vec![1.0],
        });
    }
    let weights = match mode {
        WeightingMode::Uniform => vec![1.0 / k as f64; k],
        WeightingMode::Sampled => {
            let gold = example
                .gold_index
                .ok_or_else(|| CorpusError::MissingGold(example.id.clone()))?;
            (0..k).map(|i| if i == gold { 1.0 } else { 0.0 }).collect()
        }
    };
    Ok(IntentWeighting { mode, weights })
}

/// Loads a unified corpus file. Blank lines are skipped; ids must be unique.
pub fn load_corpus(path: &Path, task: TaskKind) -> Result<Vec<AmbiguousExample>, CorpusError> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;
    parse_corpus(&text, &display, task)
}

pub fn parse_corpus(
    text: &str,
    source: &str,
    task: TaskKind,
) -> Result<Vec<AmbiguousExample>, CorpusError> {
    let mut seen = HashSet::new();
    let mut examples = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |field: &str, message: String| CorpusError::Schema {
            path: source.to_owned(),
            line: line_no,
            field: field.to_owned(),
            message,
        };
        let raw: RawExample =
            serde_json::from_str(line).map_err(|e| schema("<record>", e.to_string()))?;
        let example = raw
            .into_example()
            .map_err(|e| schema(&e.field, e.message))?;
        if example.task != task {
            return Err(schema(
                "task",
                format!("record is {} but corpus was loaded as {task}", example.task),
            ));
        }
        if !seen.insert(example.id.clone()) {
            return Err(CorpusError::DuplicateId {
                path: source.to_owned(),
                line: line_no,
                id: example.id,
            });
        }
        examples.push(example);
    }
    Ok(examples)
}

pub fn write_corpus(path: &Path, examples: &[AmbiguousExample]) -> Result<(), CorpusError> {
    write_jsonl(path, examples)
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io)?;
        }
    }
    let mut out = BufWriter::new(fs::File::create(path).map_err(io)?);
    for item in items {
        let line = serde_json::to_string(item).expect("corpus records serialize");
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}
