use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::Deserialize;

use super::PromptError;

/// One prompt template file. Every string may use `{name}` placeholders;
/// which names are legal depends on the field.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Template {
    #[serde(default)]
    pub system: Option<String>,
    pub input: String,
    #[serde(default)]
    pub context: Option<String>,
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub question: Option<String>,
    #[serde(default)]
    pub response: Option<String>,
    #[serde(default)]
    pub decision: Option<String>,
    #[serde(default)]
    pub yes: Option<String>,
    #[serde(default)]
    pub no: Option<String>,
    /// Continuation whose probability the Self-Ask estimator reads.
    #[serde(default)]
    pub scored: Option<String>,
    #[serde(default)]
    pub header: Option<String>,
    #[serde(default)]
    pub interpretation: Option<String>,
}

fn placeholder() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").expect("valid regex"))
}

pub(crate) fn placeholders(template: &str) -> HashSet<String> {
    placeholder()
        .captures_iter(template)
        .map(|c| c[1].to_owned())
        .collect()
}

/// Substitutes `{name}` placeholders in one pass, so braces inside the
/// values are never re-expanded. Unfilled placeholders are an error.
pub(crate) fn fill(template: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut missing = None;
    let out = placeholder().replace_all(template, |c: &regex::Captures<'_>| {
        match vars.iter().find(|(k, _)| *k == &c[1]) {
            Some((_, v)) => (*v).to_owned(),
            None => {
                missing.get_or_insert_with(|| c[1].to_owned());
                String::new()
            }
        }
    });
    match missing {
        Some(name) => Err(PromptError::Unfilled(name)),
        None => Ok(out.into_owned()),
    }
}

/// The literal text before the first placeholder, e.g. `"Answer:"` for
/// `"Answer: {output}"`. Used as the open slot that ends a prompt.
pub(crate) fn slot(template: &str) -> &str {
    let end = template.find('{').unwrap_or(template.len());
    template[..end].trim_end()
}

/// Regex matching a whole line rendered from `template`, with `{n}` as a
/// number group and any other placeholder as a free-text group.
pub(crate) fn line_pattern(template: &str) -> Regex {
    let mut pattern = String::from(r"^\s*");
    let mut last = 0;
    for m in placeholder().find_iter(template) {
        pattern.push_str(&regex::escape(&template[last..m.start()]));
        let name = &template[m.start() + 1..m.end() - 1];
        pattern.push_str(if name == "n" { r"(\d+)" } else { r"(.*?)" });
        last = m.end();
    }
    pattern.push_str(&regex::escape(&template[last..]));
    pattern.push_str(r"\s*$");
    Regex::new(&pattern).expect("escaped template is a valid regex")
}
