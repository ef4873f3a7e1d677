//! Oracle generation of a clarifying question and one answer per
//! interpretation, from the annotated interpretations themselves.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::template::{fill, line_pattern, slot};
use super::{req, PromptBook, PromptError, PromptVariant};
use crate::corpus::{AmbiguousExample, ClarifyingExchange, NliPair, TaskKind};
use crate::gateway::{ChatMessage, CompletionRequest, Gateway};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleOutcome {
    pub exchange: ClarifyingExchange,
    /// Advisory notes, e.g. MT answers that look French.
    pub warnings: Vec<String>,
}

/// The ambiguous phrase shown to the oracle and one line per interpretation.
fn oracle_material(example: &AmbiguousExample) -> Result<(String, Vec<String>), PromptError> {
    let bad = |m: &str| PromptError::InvalidExample(format!("`{}`: {m}", example.id));
    if !example.is_ambiguous {
        return Err(bad("oracle generation needs an ambiguous example"));
    }
    match example.task {
        TaskKind::Qa => {
            let interps = example
                .interpretations
                .iter()
                .map(|i| i.disambiguated_input.clone().ok_or_else(|| bad("missing disambiguated input")))
                .collect::<Result<_, _>>()?;
            Ok((example.input.clone(), interps))
        }
        TaskKind::Mt => {
            let interps = example
                .interpretations
                .iter()
                .map(|i| i.output.translation().map(str::to_owned).ok_or_else(|| bad("missing translation")))
                .collect::<Result<_, _>>()?;
            Ok((example.input.clone(), interps))
        }
        TaskKind::Nli => {
            // The disambiguations rewrite whichever side is ambiguous; show
            // that side alone, or both joined when both were rewritten.
            let source = NliPair::parse(&example.input).map_err(PromptError::InvalidExample)?;
            let pairs = example
                .interpretations
                .iter()
                .map(|i| {
                    let d = i.disambiguated_input.as_deref().ok_or_else(|| bad("missing disambiguated input"))?;
                    NliPair::parse(d).map_err(PromptError::InvalidExample)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let premise_varies = pairs.iter().any(|p| p.premise != source.premise);
            let hypothesis_varies = pairs.iter().any(|p| p.hypothesis != source.hypothesis);
            let pick = |p: &NliPair| match (premise_varies, hypothesis_varies) {
                (true, false) => p.premise.clone(),
                (false, true) => p.hypothesis.clone(),
                _ => format!("{} {}", p.premise, p.hypothesis),
            };
            Ok((pick(&source), pairs.iter().map(pick).collect()))
        }
    }
}

impl PromptBook {
    /// The oracle prompt: instructions, two worked examples and the live
    /// example, all in one user message with no system prompt.
    pub fn oracle_prompt(&self, example: &AmbiguousExample) -> Result<Vec<ChatMessage>, PromptError> {
        let t = self.template(example.task, PromptVariant::OracleGen);
        let (phrase, interps) = oracle_material(example)?;
        let mut lines = vec![req(&t.header).to_owned(), fill(&t.input, &[("input", &phrase)])?];
        for (n, text) in interps.iter().enumerate() {
            let n = (n + 1).to_string();
            lines.push(fill(req(&t.interpretation), &[("n", &n), ("interpretation", text)])?);
        }
        Ok(vec![ChatMessage::user(lines.join("\n"))])
    }

    /// Reads the clarifying question and exactly `k` numbered responses.
    pub fn parse_oracle(&self, task: TaskKind, text: &str, k: usize) -> Result<ClarifyingExchange, PromptError> {
        let t = self.template(task, PromptVariant::OracleGen);
        let fail = |message: String| PromptError::ParseError { message, raw: text.to_owned() };
        let question_re = line_pattern(req(&t.question));
        let response_re = line_pattern(req(&t.response));
        let question = text
            .lines()
            .find_map(|l| question_re.captures(l).map(|c| c[1].trim().to_owned()))
            .filter(|q| !q.is_empty())
            .ok_or_else(|| fail(format!("no `{}` line", slot(req(&t.question)))))?;
        let mut responses: BTreeMap<usize, String> = BTreeMap::new();
        for line in text.lines() {
            if let Some(c) = response_re.captures(line) {
                let n: usize = c[1].parse().map_err(|_| fail(format!("bad response number {}", &c[1])))?;
                let body = c[2].trim().to_owned();
                if body.is_empty() {
                    return Err(fail(format!("response {n} is empty")));
                }
                if responses.insert(n, body).is_some() {
                    return Err(fail(format!("response {n} given twice")));
                }
            }
        }
        let expected: Vec<usize> = (1..=k).collect();
        if responses.keys().copied().collect::<Vec<_>>() != expected {
            return Err(fail(format!("expected responses 1..={k}, found {}", responses.len())));
        }
        Ok(ClarifyingExchange { question, answers: responses.into_values().collect() })
    }
}

const FRENCH_CHARS: &[char] = &['à', 'â', 'ç', 'é', 'è', 'ê', 'ë', 'î', 'ï', 'ô', 'œ', 'ù', 'û', 'ü', 'ÿ'];
const FRENCH_WORDS: &[&str] = &[
    "le", "la", "les", "des", "est", "une", "un", "je", "tu", "vous", "nous", "pas", "sont", "du", "et",
];

/// Heuristic: does this supposedly English text look French?
pub fn language_leaks(text: &str) -> bool {
    let lower = text.to_lowercase();
    if lower.chars().any(|c| FRENCH_CHARS.contains(&c)) {
        return true;
    }
    let hits = lower
        .split(|c: char| !c.is_alphanumeric() && c != '\'')
        .filter(|w| FRENCH_WORDS.contains(w))
        .count();
    hits >= 2
}

/// Greedily asks the oracle for an exchange for `example`.
pub fn generate_oracle_clarification(
    gateway: &Gateway,
    book: &PromptBook,
    example: &AmbiguousExample,
    seed: u64,
    max_tokens: u32,
) -> Result<OracleOutcome, PromptError> {
    let prompt = book.oracle_prompt(example)?;
    let completion = gateway.greedy_complete(&CompletionRequest::greedy(prompt, max_tokens, seed))?;
    let exchange = book.parse_oracle(example.task, &completion.text, example.k())?;
    let mut warnings = Vec::new();
    if example.task == TaskKind::Mt {
        for (i, a) in exchange.answers.iter().enumerate() {
            if language_leaks(a) {
                tracing::warn!(id = %example.id, response = i + 1, "oracle response may not be in English");
                warnings.push(format!("response {} may not be in the source language: {a:?}", i + 1));
            }
        }
    }
    Ok(OracleOutcome { exchange, warnings })
}
