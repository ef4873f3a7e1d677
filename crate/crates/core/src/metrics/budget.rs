use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{auroc, MetricsError};
use crate::estimators::UncertaintyScore;

/// Per-example performance without and with clarification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleOutcome {
    pub example_id: String,
    pub perf_direct: f64,
    pub perf_clarified: f64,
    /// Strict: only a real gain counts.
    pub improved: bool,
}

impl ExampleOutcome {
    pub fn new(example_id: impl Into<String>, perf_direct: f64, perf_clarified: f64) -> Self {
        Self {
            example_id: example_id.into(),
            perf_direct,
            perf_clarified,
            improved: perf_clarified > perf_direct,
        }
    }

    /// Unambiguous examples gain nothing from clarification.
    pub fn unambiguous(example_id: impl Into<String>, perf: f64) -> Self {
        Self::new(example_id, perf, perf)
    }

    pub fn gain(&self) -> f64 {
        self.perf_clarified - self.perf_direct
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pool {
    AmbiguousOnly,
    #[default]
    Full,
}

impl fmt::Display for Pool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pool::AmbiguousOnly => "ambiguous_only",
            Pool::Full => "full",
        })
    }
}

impl FromStr for Pool {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "full" => Ok(Pool::Full),
            "ambiguous_only" | "ambiguous" => Ok(Pool::AmbiguousOnly),
            other => Err(format!("unknown pool `{other}`")),
        }
    }
}

/// Order-independent mean: values are summed in sorted order with Neumaier
/// compensation, so any permutation of the input gives the same bits.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in sorted {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    (sum + comp) / values.len() as f64
}

/// The `floor(b·N/100)` highest-scoring ids; ties go to the smaller id.
pub fn budget_select(scores: &[UncertaintyScore], b: f64) -> Result<BTreeSet<String>, MetricsError> {
    if !(0.0..=100.0).contains(&b) {
        return Err(MetricsError::BudgetRange(b));
    }
    if let Some(s) = scores.iter().find(|s| !s.value.is_finite()) {
        return Err(MetricsError::NonFinite(s.value));
    }
    let n = scores.len();
    // The epsilon absorbs representation error in b (e.g. 0.1-step budgets).
    let take = (((b * n as f64) / 100.0) + 1e-9).floor() as usize;
    let mut ranked: Vec<&UncertaintyScore> = scores.iter().collect();
    ranked.sort_by(|a, b| {
        b.value
            .partial_cmp(&a.value)
            .expect("finite")
            .then_with(|| a.example_id.cmp(&b.example_id))
    });
    Ok(ranked.into_iter().take(take.min(n)).map(|s| s.example_id.clone()).collect())
}

/// Mean pool performance when exactly the selected examples are clarified.
pub fn budget_performance(
    outcomes: &[ExampleOutcome],
    selected: &BTreeSet<String>,
) -> Result<f64, MetricsError> {
    if let Some(id) = selected
        .iter()
        .find(|id| !outcomes.iter().any(|o| &o.example_id == *id))
    {
        return Err(MetricsError::UnknownId(id.clone()));
    }
    let values: Vec<f64> = outcomes
        .iter()
        .map(|o| {
            if selected.contains(&o.example_id) {
                o.perf_clarified
            } else {
                o.perf_direct
            }
        })
        .collect();
    Ok(mean(&values))
}

/// Share of the full clarification gain captured at budget b, in percent.
pub fn relative_gain(perf_b: f64, perf_0: f64, perf_100: f64) -> Result<f64, MetricsError> {
    let total = perf_100 - perf_0;
    if total == 0.0 {
        return Err(MetricsError::ZeroTotalGain);
    }
    Ok(100.0 * (perf_b - perf_0) / total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub b: f64,
    pub selected: usize,
    pub performance: f64,
    pub relative_gain_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub method: String,
    pub pool: Pool,
    pub pool_size: usize,
    pub auroc: Option<f64>,
    /// Performance at b = 0.
    pub base_performance: f64,
    /// Performance at b = 100.
    pub full_performance: f64,
    pub rows: Vec<BudgetRow>,
}

fn check_coverage(
    scores: &[UncertaintyScore],
    outcomes: &[ExampleOutcome],
) -> Result<(), MetricsError> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in scores {
        *counts.entry(s.example_id.as_str()).or_default() += 1;
    }
    if let Some((id, _)) = counts.iter().find(|(_, &c)| c > 1) {
        return Err(MetricsError::Coverage(format!("`{id}` scored more than once")));
    }
    if scores.len() != outcomes.len() {
        return Err(MetricsError::Coverage(format!(
            "{} scores for {} outcomes",
            scores.len(),
            outcomes.len()
        )));
    }
    if let Some(o) = outcomes.iter().find(|o| !counts.contains_key(o.example_id.as_str())) {
        return Err(MetricsError::Coverage(format!("`{}` has no score", o.example_id)));
    }
    Ok(())
}

pub fn budget_rows(
    scores: &[UncertaintyScore],
    outcomes: &[ExampleOutcome],
    budgets: &[f64],
) -> Result<Vec<BudgetRow>, MetricsError> {
    check_coverage(scores, outcomes)?;
    let base = budget_performance(outcomes, &BTreeSet::new())?;
    let all: BTreeSet<String> = outcomes.iter().map(|o| o.example_id.clone()).collect();
    let full = budget_performance(outcomes, &all)?;
    budgets
        .iter()
        .map(|&b| {
            let selected = budget_select(scores, b)?;
            let performance = budget_performance(outcomes, &selected)?;
            Ok(BudgetRow {
                b,
                selected: selected.len(),
                performance,
                relative_gain_percent: relative_gain(performance, base, full).ok(),
            })
        })
        .collect()
}

pub fn build_budget_report(
    method: &str,
    pool: Pool,
    scores: &[UncertaintyScore],
    outcomes: &[ExampleOutcome],
    budgets: &[f64],
) -> Result<BudgetReport, MetricsError> {
    let rows = budget_rows(scores, outcomes, budgets)?;
    let by_id: HashMap<&str, f64> = scores.iter().map(|s| (s.example_id.as_str(), s.value)).collect();
    let values: Vec<f64> = outcomes.iter().map(|o| by_id[o.example_id.as_str()]).collect();
    let labels: Vec<bool> = outcomes.iter().map(|o| o.improved).collect();
    let auroc = match auroc(&values, &labels) {
        Ok(a) => Some(a),
        Err(MetricsError::DegenerateLabels) => {
            tracing::warn!(method, "all improvement labels identical; AUROC undefined");
            None
        }
        Err(e) => return Err(e),
    };
    let base = budget_performance(outcomes, &BTreeSet::new())?;
    let all: BTreeSet<String> = outcomes.iter().map(|o| o.example_id.clone()).collect();
    Ok(BudgetReport {
        method: method.to_owned(),
        pool,
        pool_size: outcomes.len(),
        auroc,
        base_performance: base,
        full_performance: budget_performance(outcomes, &all)?,
        rows,
    })
}

const DASH: &str = "—";

fn fmt_budget(b: f64) -> String {
    if b.fract() == 0.0 {
        format!("b={b:.0}%")
    } else {
        format!("b={b}%")
    }
}

fn fmt_fixed(x: f64, decimals: usize) -> String {
    // Adding 0.0 turns a negative zero into a positive one.
    let scale = 10f64.powi(decimals as i32);
    format!("{:.*}", decimals, (x * scale).round() / scale + 0.0)
}

fn budget_cell(report: &BudgetReport, b: f64) -> String {
    let Some(row) = report.rows.iter().find(|r| r.b == b) else {
        return DASH.into();
    };
    let gain = relative_gain(row.performance, report.base_performance, report.full_performance)
        .map(|g| format!("{}%", fmt_fixed(g, 0)))
        .unwrap_or_else(|_| DASH.into());
    format!("{} ({gain})", fmt_fixed(100.0 * row.performance, 1))
}

/// Aligned text table with columns Method, AUROC and one per budget; each
/// budget cell shows performance in percent and the relative gain. Gains
/// are recomputed from the stored rows, never read from a cached string.
pub fn render_budget_table(reports: &[BudgetReport], budgets: &[f64]) -> String {
    let mut rows: Vec<Vec<String>> = Vec::with_capacity(reports.len() + 1);
    let mut header = vec!["Method".to_owned(), "AUROC".to_owned()];
    header.extend(budgets.iter().map(|&b| fmt_budget(b)));
    rows.push(header);
    for r in reports {
        let mut row = vec![
            r.method.clone(),
            r.auroc.map(|a| fmt_fixed(a, 3)).unwrap_or_else(|| DASH.into()),
        ];
        row.extend(budgets.iter().map(|&b| budget_cell(r, b)));
        rows.push(row);
    }
    let cols = rows[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, &w)| format!("{cell}{}", " ".repeat(w - cell.chars().count())))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (cols - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}
