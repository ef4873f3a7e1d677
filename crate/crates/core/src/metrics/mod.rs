//! Task metrics, AUROC over improvement labels, and interaction-budget
//! evaluation.

mod budget;
mod contrastive;

use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::corpus::NliLabel;

pub use budget::{
    budget_performance, budget_rows, budget_select, build_budget_report, mean, relative_gain,
    render_budget_table, BudgetReport, BudgetRow, ExampleOutcome, Pool,
};
pub use contrastive::{contrastive_compare, contrastive_item_score};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("AUROC needs at least one positive and one negative label")]
    DegenerateLabels,
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("score {0} is not finite")]
    NonFinite(f64),
    #[error("selected id `{0}` is not in the outcome pool")]
    UnknownId(String),
    #[error("clarifying every example gives no gain; relative gain is undefined")]
    ZeroTotalGain,
    #[error("scores and outcomes disagree: {0}")]
    Coverage(String),
    #[error("budget {0} outside [0, 100]")]
    BudgetRange(f64),
}

fn articles() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(a|an|the)\b").expect("valid regex"))
}

/// Lowercase, drop ASCII punctuation, drop the articles "a", "an", "the",
/// and collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    let no_articles = articles().replace_all(&no_punct, " ");
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// 1 when any normalized gold answer occurs inside the normalized output.
/// Golds that normalize to nothing never match.
pub fn answer_recall(output: &str, gold_answers: &[String]) -> u8 {
    let out = normalize_answer(output);
    gold_answers
        .iter()
        .map(|g| normalize_answer(g))
        .any(|g| !g.is_empty() && out.contains(&g)) as u8
}

/// Three-way accuracy on one item; `None` is an unparseable prediction.
pub fn nli_item_score(predicted: Option<NliLabel>, gold: NliLabel) -> u8 {
    (predicted == Some(gold)) as u8
}

/// Mann–Whitney AUROC: the fraction of (positive, negative) pairs in which
/// the positive scores higher, ties counting one half.
pub fn auroc(scores: &[f64], improved: &[bool]) -> Result<f64, MetricsError> {
    if scores.len() != improved.len() {
        return Err(MetricsError::LengthMismatch { scores: scores.len(), labels: improved.len() });
    }
    if let Some(&bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite(bad));
    }
    let positives = improved.iter().filter(|&&b| b).count();
    let negatives = improved.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::DegenerateLabels);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // Sum of 1-based midranks of the positives.
    let mut positive_rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let midrank = (start + 1 + end) as f64 / 2.0;
        let tied_positives = order[start..end].iter().filter(|&&i| improved[i]).count();
        positive_rank_sum += midrank * tied_positives as f64;
        start = end;
    }
    let p = positives as f64;
    let u = positive_rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}
