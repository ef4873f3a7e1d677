//! Prompt construction and output parsing for every prompt variant.
//!
//! Templates are TOML data files, one per task and variant, compiled into
//! the binary and overridable from a directory with the same
//! `<task>/<variant>.toml` layout. Chat prompts follow one shape: an
//! optional system instruction, exemplar user/assistant turns, then the
//! live input ending in an open slot (`"Answer:"`, `"French:"`, ...) that the
//! model completes.

mod exemplars;
mod oracle;
mod template;

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AmbiguousExample, NliLabel, NliPair, TaskKind, TaskOutput};
use crate::gateway::{ChatMessage, GatewayError};

pub use exemplars::{sample_exemplars, select_exemplars, ExemplarPool};
pub use oracle::{generate_oracle_clarification, language_leaks, OracleOutcome};
pub use template::Template;

use template::{fill, placeholders, slot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    Direct,
    Follow,
    Disambig,
    SelfAsk,
    IntentSimQuestion,
    IntentSimAnswer,
    OracleGen,
}

impl PromptVariant {
    pub const ALL: [PromptVariant; 7] = [
        PromptVariant::Direct,
        PromptVariant::Follow,
        PromptVariant::Disambig,
        PromptVariant::SelfAsk,
        PromptVariant::IntentSimQuestion,
        PromptVariant::IntentSimAnswer,
        PromptVariant::OracleGen,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptVariant::Direct => "direct",
            PromptVariant::Follow => "follow",
            PromptVariant::Disambig => "disambig",
            PromptVariant::SelfAsk => "self_ask",
            PromptVariant::IntentSimQuestion => "intent_sim_question",
            PromptVariant::IntentSimAnswer => "intent_sim_answer",
            PromptVariant::OracleGen => "oracle",
        }
    }

    /// Label used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            PromptVariant::Direct => "Direct",
            PromptVariant::Follow => "Follow",
            PromptVariant::Disambig => "Disambig",
            PromptVariant::SelfAsk => "Self-Ask",
            PromptVariant::IntentSimQuestion => "Intent-Sim question",
            PromptVariant::IntentSimAnswer => "Intent-Sim answer",
            PromptVariant::OracleGen => "Oracle",
        }
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        PromptVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == key)
            .ok_or_else(|| format!("unknown prompt variant `{s}`"))
    }
}

#[derive(Debug, Clone, Error)]
pub enum PromptError {
    #[error("{variant} prompt needs {what}")]
    MissingExtras { variant: PromptVariant, what: &'static str },
    #[error("exemplar pool too small: need {needed} {kind}, have {available}")]
    PoolTooSmall { needed: usize, available: usize, kind: &'static str },
    #[error("could not parse {variant} output: {raw:?}")]
    UnparseableOutput { variant: PromptVariant, raw: String },
    #[error("malformed oracle output ({message}): {raw:?}")]
    ParseError { message: String, raw: String },
    #[error("template {task}/{variant}: {message}")]
    Template { task: TaskKind, variant: PromptVariant, message: String },
    #[error("unfilled placeholder {{{0}}}")]
    Unfilled(String),
    #[error("{0}")]
    InvalidExample(String),
    #[error("exemplar `{0}` is also an evaluation example")]
    Contamination(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Material a variant needs beyond the example itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct Extras<'a> {
    /// Clarifying question and the user's answer (Follow).
    pub clarification: Option<(&'a str, &'a str)>,
    /// Interpretation whose disambiguated input is shown (Disambig).
    pub interpretation: Option<usize>,
    /// Clarifying question already asked (IntentSimAnswer).
    pub question: Option<&'a str>,
}

/// A parsed assistant completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Parsed {
    Answer(String),
    Label(NliLabel),
    Translation(String),
    FollowUpNeeded(bool),
    Question(String),
    Response(String),
}

impl Parsed {
    /// Key for exact-match grouping: trimmed and case-folded.
    pub fn match_key(&self) -> String {
        match self {
            Parsed::Label(l) => l.as_str().to_owned(),
            Parsed::FollowUpNeeded(b) => b.to_string(),
            Parsed::Answer(s) | Parsed::Translation(s) | Parsed::Question(s) | Parsed::Response(s) => {
                s.trim().to_lowercase()
            }
        }
    }

    pub fn text(&self) -> String {
        match self {
            Parsed::Label(l) => nli_token(*l).to_owned(),
            Parsed::FollowUpNeeded(b) => if *b { "Yes" } else { "No" }.to_owned(),
            Parsed::Answer(s) | Parsed::Translation(s) | Parsed::Question(s) | Parsed::Response(s) => {
                s.clone()
            }
        }
    }
}

/// Answer tokens for NLI labels.
pub fn nli_token(label: NliLabel) -> &'static str {
    match label {
        NliLabel::Entailment => "True",
        NliLabel::Contradiction => "False",
        NliLabel::Neutral => "Inconclusive",
    }
}

fn nli_from_text(text: &str) -> Option<NliLabel> {
    let lower = text.to_lowercase();
    let mut best: Option<(usize, NliLabel)> = None;
    for label in NliLabel::ALL {
        let token = nli_token(label).to_lowercase();
        let hit = lower.match_indices(&token).find(|(i, _)| {
            let before = lower[..*i].chars().next_back();
            let after = lower[i + token.len()..].chars().next();
            !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
        });
        if let Some((i, _)) = hit {
            if best.is_none_or(|(b, _)| i < b) {
                best = Some((i, label));
            }
        }
    }
    best.map(|(_, l)| l)
}

macro_rules! builtin {
    ($task:literal, $variant:literal) => {
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/templates/", $task, "/", $variant, ".toml"))
    };
}

fn builtin_source(task: TaskKind, variant: PromptVariant) -> &'static str {
    use PromptVariant::*;
    use TaskKind::*;
    match (task, variant) {
        (Qa, Direct) => builtin!("qa", "direct"),
        (Qa, Follow) => builtin!("qa", "follow"),
        (Qa, Disambig) => builtin!("qa", "disambig"),
        (Qa, SelfAsk) => builtin!("qa", "self_ask"),
        (Qa, IntentSimQuestion) => builtin!("qa", "intent_sim_question"),
        (Qa, IntentSimAnswer) => builtin!("qa", "intent_sim_answer"),
        (Qa, OracleGen) => builtin!("qa", "oracle"),
        (Nli, Direct) => builtin!("nli", "direct"),
        (Nli, Follow) => builtin!("nli", "follow"),
        (Nli, Disambig) => builtin!("nli", "disambig"),
        (Nli, SelfAsk) => builtin!("nli", "self_ask"),
        (Nli, IntentSimQuestion) => builtin!("nli", "intent_sim_question"),
        (Nli, IntentSimAnswer) => builtin!("nli", "intent_sim_answer"),
        (Nli, OracleGen) => builtin!("nli", "oracle"),
        (Mt, Direct) => builtin!("mt", "direct"),
        (Mt, Follow) => builtin!("mt", "follow"),
        (Mt, Disambig) => builtin!("mt", "disambig"),
        (Mt, SelfAsk) => builtin!("mt", "self_ask"),
        (Mt, IntentSimQuestion) => builtin!("mt", "intent_sim_question"),
        (Mt, IntentSimAnswer) => builtin!("mt", "intent_sim_answer"),
        (Mt, OracleGen) => builtin!("mt", "oracle"),
    }
}

fn check_template(task: TaskKind, variant: PromptVariant, t: &Template) -> Result<(), PromptError> {
    let err = |message: String| PromptError::Template { task, variant, message };
    let require = |name: &str, field: &Option<String>| -> Result<(), PromptError> {
        match field {
            Some(s) if !s.trim().is_empty() => Ok(()),
            _ => Err(err(format!("missing `{name}`"))),
        }
    };
    let allow = |name: &str, field: &str, legal: &[&str]| -> Result<(), PromptError> {
        match placeholders(field).into_iter().find(|p| !legal.contains(&p.as_str())) {
            Some(p) => Err(err(format!("`{name}` uses unknown placeholder {{{p}}}"))),
            None => Ok(()),
        }
    };
    let input_names: &[&str] = match task {
        TaskKind::Nli => &["input", "premise", "hypothesis"],
        _ => &["input"],
    };
    if variant == PromptVariant::OracleGen {
        require("header", &t.header)?;
        require("interpretation", &t.interpretation)?;
        require("question", &t.question)?;
        require("response", &t.response)?;
        allow("input", &t.input, &["input"])?;
        allow("interpretation", t.interpretation.as_deref().unwrap_or(""), &["n", "interpretation"])?;
        allow("question", t.question.as_deref().unwrap_or(""), &["question"])?;
        allow("response", t.response.as_deref().unwrap_or(""), &["n", "response"])?;
        return Ok(());
    }
    allow("input", &t.input, input_names)?;
    require("output", &t.output)?;
    allow("output", t.output.as_deref().unwrap_or(""), &["output"])?;
    if task == TaskKind::Mt {
        require("context", &t.context)?;
        allow("context", t.context.as_deref().unwrap_or(""), &["context"])?;
    }
    let slot_field = match variant {
        PromptVariant::Follow
        | PromptVariant::IntentSimQuestion
        | PromptVariant::IntentSimAnswer
        | PromptVariant::SelfAsk => {
            require("question", &t.question)?;
            require("response", &t.response)?;
            allow("question", t.question.as_deref().unwrap_or(""), &["question"])?;
            allow("response", t.response.as_deref().unwrap_or(""), &["response"])?;
            match variant {
                PromptVariant::SelfAsk => {
                    require("decision", &t.decision)?;
                    require("yes", &t.yes)?;
                    require("no", &t.no)?;
                    require("scored", &t.scored)?;
                    allow("decision", t.decision.as_deref().unwrap_or(""), &["decision"])?;
                    t.decision.as_deref()
                }
                PromptVariant::IntentSimQuestion => t.question.as_deref(),
                PromptVariant::IntentSimAnswer => t.response.as_deref(),
                _ => t.output.as_deref(),
            }
        }
        _ => t.output.as_deref(),
    };
    if slot(slot_field.unwrap_or("")).is_empty() {
        return Err(err("answer slot template must start with literal text".into()));
    }
    Ok(())
}

/// The full set of templates for all tasks and variants.
#[derive(Debug, Clone)]
pub struct PromptBook {
    templates: HashMap<(TaskKind, PromptVariant), Template>,
}

impl Default for PromptBook {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptBook {
    pub fn builtin() -> Self {
        let mut templates = HashMap::new();
        for task in TaskKind::ALL {
            for variant in PromptVariant::ALL {
                let t: Template = toml::from_str(builtin_source(task, variant))
                    .unwrap_or_else(|e| panic!("built-in template {task}/{variant}: {e}"));
                check_template(task, variant, &t)
                    .unwrap_or_else(|e| panic!("built-in template invalid: {e}"));
                templates.insert((task, variant), t);
            }
        }
        Self { templates }
    }

    /// Built-in templates, replaced by any `<task>/<variant>.toml` found in `dir`.
    pub fn with_overrides(dir: &Path) -> Result<Self, PromptError> {
        let mut book = Self::builtin();
        for task in TaskKind::ALL {
            for variant in PromptVariant::ALL {
                let path = dir.join(task.as_str()).join(format!("{}.toml", variant.as_str()));
                if !path.exists() {
                    continue;
                }
                let io = |message: String| PromptError::Io { path: path.display().to_string(), message };
                let text = fs::read_to_string(&path).map_err(|e| io(e.to_string()))?;
                let t: Template = toml::from_str(&text).map_err(|e| io(e.to_string()))?;
                check_template(task, variant, &t)?;
                book.templates.insert((task, variant), t);
            }
        }
        Ok(book)
    }

    pub fn template(&self, task: TaskKind, variant: PromptVariant) -> &Template {
        &self.templates[&(task, variant)]
    }

    /// The continuation scored by Self-Ask, e.g. `" No"`.
    pub fn self_ask_continuation(&self, task: TaskKind) -> &str {
        self.template(task, PromptVariant::SelfAsk).scored.as_deref().unwrap_or(" No")
    }

    /// Renders a chat prompt for `example` under `variant`.
    pub fn build_prompt(
        &self,
        variant: PromptVariant,
        exemplars: &[&AmbiguousExample],
        example: &AmbiguousExample,
        extras: Extras<'_>,
    ) -> Result<Vec<ChatMessage>, PromptError> {
        if variant == PromptVariant::OracleGen {
            return self.oracle_prompt(example);
        }
        let task = example.task;
        if let Some(e) = exemplars.iter().find(|e| e.task != task) {
            return Err(PromptError::InvalidExample(format!(
                "exemplar `{}` is {} but the example is {task}",
                e.id, e.task
            )));
        }
        let t = self.template(task, variant);
        let mut messages = Vec::new();
        if let Some(system) = &t.system {
            messages.push(ChatMessage::system(system.clone()));
        }
        for e in exemplars {
            messages.extend(self.exemplar_turns(variant, t, e)?);
        }
        messages.extend(self.live_turns(variant, t, example, extras)?);
        Ok(messages)
    }

    fn exemplar_turns(
        &self,
        variant: PromptVariant,
        t: &Template,
        e: &AmbiguousExample,
    ) -> Result<Vec<ChatMessage>, PromptError> {
        let i = e.gold_index.unwrap_or(0);
        let shown = if variant == PromptVariant::Disambig { Some(i) } else { None };
        let user = user_input(t, e, shown)?;
        let output = fill(req(&t.output), &[("output", &output_text(&e.interpretations[i].output))])?;
        let exchange = e.exchange.as_ref().filter(|_| e.is_ambiguous);
        let clarified = |x: &crate::corpus::ClarifyingExchange, asked_prefix: Option<String>| {
            let question = fill(req(&t.question), &[("question", &x.question)])?;
            let response = fill(req(&t.response), &[("response", &x.answers[i])])?;
            let asked = match asked_prefix {
                Some(p) => format!("{p}\n{question}"),
                None => question,
            };
            Ok::<_, PromptError>(vec![
                ChatMessage::user(user.clone()),
                ChatMessage::assistant(asked),
                ChatMessage::user(response),
                ChatMessage::assistant(output.clone()),
            ])
        };
        let turns = match (variant, exchange) {
            (PromptVariant::Direct | PromptVariant::Disambig, _) => {
                vec![ChatMessage::user(user), ChatMessage::assistant(output)]
            }
            (PromptVariant::SelfAsk, None) => {
                let decision = fill(req(&t.decision), &[("decision", req(&t.no))])?;
                vec![ChatMessage::user(user), ChatMessage::assistant(format!("{decision}\n{output}"))]
            }
            (PromptVariant::SelfAsk, Some(x)) => {
                let decision = fill(req(&t.decision), &[("decision", req(&t.yes))])?;
                clarified(x, Some(decision))?
            }
            (_, None) => vec![ChatMessage::user(user), ChatMessage::assistant(output)],
            (_, Some(x)) => clarified(x, None)?,
        };
        Ok(turns)
    }

    fn live_turns(
        &self,
        variant: PromptVariant,
        t: &Template,
        example: &AmbiguousExample,
        extras: Extras<'_>,
    ) -> Result<Vec<ChatMessage>, PromptError> {
        let answer_slot = || ChatMessage::assistant(slot(req(&t.output)));
        let missing = |what| PromptError::MissingExtras { variant, what };
        let turns = match variant {
            PromptVariant::Direct => vec![ChatMessage::user(user_input(t, example, None)?), answer_slot()],
            PromptVariant::Disambig => {
                let i = match extras.interpretation {
                    Some(i) => i,
                    None if example.k() == 1 => 0,
                    None => return Err(missing("an interpretation index")),
                };
                if i >= example.k() {
                    return Err(PromptError::InvalidExample(format!(
                        "interpretation {i} out of range for `{}`",
                        example.id
                    )));
                }
                vec![ChatMessage::user(user_input(t, example, Some(i))?), answer_slot()]
            }
            PromptVariant::Follow => {
                let (q, a) = extras.clarification.ok_or_else(|| missing("a clarifying question and answer"))?;
                vec![
                    ChatMessage::user(user_input(t, example, None)?),
                    ChatMessage::assistant(fill(req(&t.question), &[("question", q)])?),
                    ChatMessage::user(fill(req(&t.response), &[("response", a)])?),
                    answer_slot(),
                ]
            }
            PromptVariant::SelfAsk => vec![
                ChatMessage::user(user_input(t, example, None)?),
                ChatMessage::assistant(slot(req(&t.decision))),
            ],
            PromptVariant::IntentSimQuestion => vec![
                ChatMessage::user(user_input(t, example, None)?),
                ChatMessage::assistant(slot(req(&t.question))),
            ],
            PromptVariant::IntentSimAnswer => {
                let q = extras.question.ok_or_else(|| missing("the clarifying question"))?;
                vec![
                    ChatMessage::user(user_input(t, example, None)?),
                    ChatMessage::assistant(fill(req(&t.question), &[("question", q)])?),
                    ChatMessage::user(slot(req(&t.response))),
                ]
            }
            PromptVariant::OracleGen => unreachable!("handled by oracle_prompt"),
        };
        Ok(turns)
    }

    /// Parses an assistant completion produced under `variant`. A completion
    /// that continues the open slot without repeating its marker is read as if
    /// the marker were there.
    pub fn parse(&self, variant: PromptVariant, task: TaskKind, text: &str) -> Result<Parsed, PromptError> {
        let t = self.template(task, variant);
        let unparseable = || PromptError::UnparseableOutput { variant, raw: text.to_owned() };
        let marker = match variant {
            PromptVariant::Direct | PromptVariant::Follow | PromptVariant::Disambig => slot(req(&t.output)),
            PromptVariant::SelfAsk => slot(req(&t.decision)),
            PromptVariant::IntentSimQuestion => slot(req(&t.question)),
            PromptVariant::IntentSimAnswer => slot(req(&t.response)),
            PromptVariant::OracleGen => {
                return Err(PromptError::InvalidExample(
                    "oracle output is parsed with parse_oracle".into(),
                ))
            }
        };
        let body = after_marker(text, marker).ok_or_else(unparseable)?;
        match variant {
            PromptVariant::SelfAsk => {
                let word = |s: &str| {
                    s.trim()
                        .trim_end_matches(|c: char| c.is_ascii_punctuation())
                        .to_lowercase()
                };
                let first = word(body.split_whitespace().next().unwrap_or(""));
                if first == word(req(&t.yes)) {
                    Ok(Parsed::FollowUpNeeded(true))
                } else if first == word(req(&t.no)) {
                    Ok(Parsed::FollowUpNeeded(false))
                } else {
                    Err(unparseable())
                }
            }
            PromptVariant::IntentSimQuestion => Ok(Parsed::Question(body)),
            PromptVariant::IntentSimAnswer => Ok(Parsed::Response(body)),
            _ => match task {
                TaskKind::Qa => Ok(Parsed::Answer(body)),
                TaskKind::Mt => Ok(Parsed::Translation(body)),
                TaskKind::Nli => nli_from_text(&body).map(Parsed::Label).ok_or_else(unparseable),
            },
        }
    }
}

// Presence is checked when a template is loaded.
fn req(f: &Option<String>) -> &str {
    f.as_deref().unwrap_or("")
}

/// First line of text after `marker`, trimmed; `None` when empty.
fn after_marker(text: &str, marker: &str) -> Option<String> {
    let rest = match text.find(marker) {
        Some(i) => &text[i + marker.len()..],
        None => text,
    };
    let line = rest.trim_start().lines().next().unwrap_or("").trim();
    (!line.is_empty()).then(|| line.to_owned())
}

/// Rendered output of one interpretation as it appears in an exemplar turn.
fn output_text(output: &TaskOutput) -> String {
    let with_period = |s: &str| {
        let s = s.trim();
        if s.ends_with(['.', '!', '?']) {
            s.to_owned()
        } else {
            format!("{s}.")
        }
    };
    match output {
        TaskOutput::Answers(a) => with_period(a.first().map(String::as_str).unwrap_or("")),
        TaskOutput::Label(l) => with_period(nli_token(*l)),
        TaskOutput::Translation(t) => t.trim().to_owned(),
    }
}

/// The user turn for an example. `shown` selects an interpretation whose
/// disambiguated input (QA/NLI) or context (MT) replaces the raw input.
/// Unambiguous MT inputs always carry their context.
fn user_input(t: &Template, e: &AmbiguousExample, shown: Option<usize>) -> Result<String, PromptError> {
    let (input, context) = match (e.task, shown) {
        (TaskKind::Mt, Some(i)) => (e.input.as_str(), e.interpretations[i].context.as_deref()),
        (TaskKind::Mt, None) if !e.is_ambiguous => (e.input.as_str(), e.interpretations[0].context.as_deref()),
        (_, Some(i)) => (
            e.interpretations[i].disambiguated_input.as_deref().unwrap_or(&e.input),
            None,
        ),
        _ => (e.input.as_str(), None),
    };
    let body = if e.task == TaskKind::Nli {
        let pair = NliPair::parse(input).map_err(PromptError::InvalidExample)?;
        fill(&t.input, &[("input", input), ("premise", &pair.premise), ("hypothesis", &pair.hypothesis)])?
    } else {
        fill(&t.input, &[("input", input)])?
    };
    match context {
        Some(c) => Ok(format!("{}\n{body}", fill(req(&t.context), &[("context", c)])?)),
        None => Ok(body),
    }
}

/// Parse with the built-in templates.
pub fn parse_structured_output(
    variant: PromptVariant,
    task: TaskKind,
    text: &str,
) -> Result<Parsed, PromptError> {
    static BOOK: std::sync::OnceLock<PromptBook> = std::sync::OnceLock::new();
    BOOK.get_or_init(PromptBook::builtin).parse(variant, task, text)
}
