//! Stored reports and their text rendering.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use clarify_core::metrics::{render_budget_table, BudgetReport};
use clarify_core::{Pool, PromptVariant, TaskKind, WeightingMode};

use crate::error::CliError;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub tool_version: String,
    pub report: Report,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Report {
    Clarifications(ClarificationSummary),
    Responsiveness(ResponsivenessReport),
    WhenToClarify(WhenToClarifyReport),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClarificationSummary {
    pub task: TaskKind,
    pub examples: usize,
    pub ambiguous: usize,
    pub already_present: usize,
    pub attached: usize,
    pub failed: usize,
    pub warnings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponsivenessCell {
    pub variant: PromptVariant,
    pub mode: WeightingMode,
    /// Mean performance in [0, 1].
    pub performance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponsivenessReport {
    pub task: TaskKind,
    pub variants: Vec<PromptVariant>,
    pub modes: Vec<WeightingMode>,
    pub evaluated: usize,
    pub skipped_unambiguous: usize,
    pub skipped_missing_exchange: usize,
    pub skipped_missing_disambiguation: usize,
    pub failed: usize,
    pub cells: Vec<ResponsivenessCell>,
}

impl ResponsivenessReport {
    pub fn performance(&self, variant: PromptVariant, mode: WeightingMode) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.variant == variant && c.mode == mode)
            .map(|c| c.performance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhenToClarifyReport {
    pub task: TaskKind,
    pub pool: Pool,
    pub pool_size: usize,
    pub excluded: usize,
    pub outcome_weighting: WeightingMode,
    pub outcome_source: String,
    pub budgets: Vec<f64>,
    pub methods: Vec<BudgetReport>,
}

fn fixed1(x: f64) -> String {
    // Adding 0.0 turns a negative zero into a positive one.
    format!("{:.1}", (x * 10.0).round() / 10.0 + 0.0)
}

fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.first().map_or(0, Vec::len);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (n, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, &w)| format!("{cell}{}", " ".repeat(w - cell.chars().count())))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if n == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * cols.saturating_sub(1)));
            out.push('\n');
        }
    }
    out
}

fn mode_title(m: WeightingMode) -> &'static str {
    match m {
        WeightingMode::Uniform => "Uniform",
        WeightingMode::Sampled => "Sampled",
    }
}

impl Report {
    /// Plain-text rendering; a pure function of the stored report.
    pub fn render(&self) -> String {
        match self {
            Report::Clarifications(s) => format!(
                "task: {}\nexamples: {}\nambiguous: {}\nalready present: {}\nattached: {}\nfailed: {}\nwarnings: {}\n",
                s.task, s.examples, s.ambiguous, s.already_present, s.attached, s.failed, s.warnings
            ),
            Report::Responsiveness(r) => {
                let mut rows = vec![std::iter::once("Clarification".to_owned())
                    .chain(r.modes.iter().map(|&m| mode_title(m).to_owned()))
                    .collect::<Vec<_>>()];
                for &v in &r.variants {
                    let mut row = vec![v.display_name().to_owned()];
                    for &m in &r.modes {
                        let cell = match r.performance(v, m) {
                            None => "—".to_owned(),
                            Some(p) => match r.performance(PromptVariant::Direct, m) {
                                Some(d) if v != PromptVariant::Direct => {
                                    format!("{} ({})", fixed1(100.0 * p), fixed1(100.0 * (p - d)))
                                }
                                _ => fixed1(100.0 * p),
                            },
                        };
                        row.push(cell);
                    }
                    rows.push(row);
                }
                format!(
                    "task: {}\n\n{}\nevaluated: {}\nskipped (unambiguous): {}\nskipped (missing exchange): {}\nskipped (missing disambiguation): {}\nfailed: {}\n",
                    r.task,
                    align(&rows),
                    r.evaluated,
                    r.skipped_unambiguous,
                    r.skipped_missing_exchange,
                    r.skipped_missing_disambiguation,
                    r.failed
                )
            }
            Report::WhenToClarify(r) => format!(
                "task: {}\npool: {} ({} examples, {} excluded)\noutcomes: {} weighting, {}\n\n{}",
                r.task,
                r.pool,
                r.pool_size,
                r.excluded,
                r.outcome_weighting,
                r.outcome_source,
                render_budget_table(&r.methods, &r.budgets)
            ),
        }
    }
}

fn version_tuple(v: &str) -> Option<Vec<u64>> {
    v.split('.').map(|p| p.parse().ok()).collect()
}

/// Fails when `found` is newer than this build.
pub fn check_version(found: &str) -> Result<(), CliError> {
    let mismatch = || CliError::VersionMismatch { found: found.to_owned(), current: TOOL_VERSION.to_owned() };
    let f = version_tuple(found).ok_or_else(mismatch)?;
    let c = version_tuple(TOOL_VERSION).expect("crate version is numeric");
    if f > c {
        return Err(mismatch());
    }
    Ok(())
}

/// Loads `report.json` from an artifact directory or a direct path. The
/// version is checked before the body is interpreted.
pub fn load_report(path: &Path) -> Result<ReportFile, CliError> {
    let file = if path.is_dir() { path.join("report.json") } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&file).map_err(|e| CliError::io(&file, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| CliError::io(&file, e))?;
    let version = value
        .get("tool_version")
        .and_then(Value::as_str)
        .ok_or_else(|| CliError::io(&file, "missing tool_version"))?;
    check_version(version)?;
    serde_json::from_value(value).map_err(|e| CliError::io(&file, e))
}
