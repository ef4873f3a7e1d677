//! Mapping a sampled intent onto an annotated interpretation.
//!
//! A source example is kept only when exactly one interpretation matches;
//! zero or several matches drop it.

use std::collections::HashSet;

use thiserror::Error;

use super::{Interpretation, NliLabel};
use crate::metrics::normalize_answer;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MatchError {
    #[error("no interpretation matches the sampled intent")]
    NoMatch,
    #[error("sampled intent matches interpretations {0:?}")]
    MultiMatch(Vec<usize>),
    #[error("{0}")]
    Precondition(String),
}

fn unique(matches: Vec<usize>) -> Result<usize, MatchError> {
    match matches.as_slice() {
        [] => Err(MatchError::NoMatch),
        [one] => Ok(*one),
        _ => Err(MatchError::MultiMatch(matches)),
    }
}

/// Finds the interpretation whose answers share a normalized string with the
/// source answers. Normalized forms are compared by exact equality.
pub fn match_qa_intent(
    source_answers: &[String],
    interpretations: &[Interpretation],
) -> Result<usize, MatchError> {
    if interpretations.len() < 2 {
        return Err(MatchError::Precondition(
            "QA intent matching needs at least two interpretations".into(),
        ));
    }
    let source: HashSet<String> = source_answers
        .iter()
        .map(|a| normalize_answer(a))
        .filter(|a| !a.is_empty())
        .collect();
    let mut matches = Vec::new();
    for interp in interpretations {
        let answers = interp.output.answers().ok_or_else(|| {
            MatchError::Precondition(format!("interpretation {} has no answers", interp.index))
        })?;
        if answers.is_empty() {
            return Err(MatchError::Precondition(format!(
                "interpretation {} has an empty answer list",
                interp.index
            )));
        }
        if answers.iter().any(|a| source.contains(&normalize_answer(a))) {
            matches.push(interp.index);
        }
    }
    unique(matches)
}

/// Finds the interpretation whose label equals the label annotators gave the
/// ambiguous input.
pub fn match_nli_intent(
    ambiguous_label: NliLabel,
    interpretation_labels: &[NliLabel],
) -> Result<usize, MatchError> {
    if interpretation_labels.len() < 2 {
        return Err(MatchError::Precondition(
            "NLI intent matching needs at least two interpretations".into(),
        ));
    }
    unique(
        interpretation_labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == ambiguous_label)
            .map(|(i, _)| i)
            .collect(),
    )
}
