use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{EntailmentLabel, Judge};
use crate::corpus::{AmbiguousExample, Interpretation, NliLabel, TaskKind, TaskOutput};
use crate::gateway::openai::{agent, post_json};
use crate::gateway::{CacheKey, CompletionRequest, DiskCache, Gateway, GatewayError};
use crate::prompting::{Extras, Parsed, PromptBook, PromptVariant};

/// Entailment exactly when the two texts are identical.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatchJudge;

impl Judge for ExactMatchJudge {
    fn id(&self) -> String {
        "exact".into()
    }

    fn judge(&self, premise: &str, hypothesis: &str) -> Result<EntailmentLabel, GatewayError> {
        Ok(if premise == hypothesis { NliLabel::Entailment } else { NliLabel::Neutral })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedPair {
    pub premise: String,
    pub hypothesis: String,
    pub label: NliLabel,
}

/// A judge driven by a JSON script:
///
/// ```json
/// {"groups": [["The back of a car.", "The large storage compartment of a car."]],
///  "pairs": [{"premise": "a", "hypothesis": "b", "label": "contradiction"}],
///  "default": "neutral"}
/// ```
///
/// Explicit pairs win. Otherwise two texts entail each other when they fall
/// in the same group; a text belongs to a group when it equals a member or
/// ends with a space and a member, so question-answer concatenations match
/// by their answer. Identical texts always entail.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedJudge {
    #[serde(default)]
    pub groups: Vec<Vec<String>>,
    #[serde(default)]
    pub pairs: Vec<ScriptedPair>,
    #[serde(default = "neutral")]
    pub default: NliLabel,
}

fn neutral() -> NliLabel {
    NliLabel::Neutral
}

impl ScriptedJudge {
    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// The group of the longest member that `text` equals or ends with.
    fn group_of(&self, text: &str) -> Option<usize> {
        let mut best: Option<(usize, usize)> = None;
        for (g, members) in self.groups.iter().enumerate() {
            for m in members {
                let hit = text == m
                    || (text.len() > m.len()
                        && text.ends_with(m.as_str())
                        && text[..text.len() - m.len()].ends_with(' '));
                if hit && best.is_none_or(|(len, _)| m.len() > len) {
                    best = Some((m.len(), g));
                }
            }
        }
        best.map(|(_, g)| g)
    }
}

impl Judge for ScriptedJudge {
    fn id(&self) -> String {
        let body = serde_json::to_string(self).expect("script serializes");
        format!("scripted:{}", &CacheKey::for_payload("scripted-judge", &body).0[..16])
    }

    fn judge(&self, premise: &str, hypothesis: &str) -> Result<EntailmentLabel, GatewayError> {
        if let Some(p) = self.pairs.iter().find(|p| p.premise == premise && p.hypothesis == hypothesis) {
            return Ok(p.label);
        }
        if premise == hypothesis {
            return Ok(NliLabel::Entailment);
        }
        match (self.group_of(premise), self.group_of(hypothesis)) {
            (Some(a), Some(b)) if a == b => Ok(NliLabel::Entailment),
            _ => Ok(self.default),
        }
    }
}

/// HTTP NLI service: `POST {premise, hypothesis}` answered by
/// `{label, scores: {entailment, neutral, contradiction}}`.
pub struct RemoteNliJudge {
    url: String,
    agent: ureq::Agent,
    attempts: u32,
    backoff: Duration,
}

#[derive(Deserialize)]
struct RemoteVerdict {
    label: String,
}

impl RemoteNliJudge {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        Self { url: url.into(), agent: agent(timeout), attempts: 3, backoff: Duration::from_millis(500) }
    }
}

impl Judge for RemoteNliJudge {
    fn id(&self) -> String {
        format!("remote:{}", self.url)
    }

    fn judge(&self, premise: &str, hypothesis: &str) -> Result<EntailmentLabel, GatewayError> {
        let body = json!({"premise": premise, "hypothesis": hypothesis});
        let mut attempt = 0;
        let value = loop {
            attempt += 1;
            match post_json(&self.agent, &self.url, None, &body) {
                Ok(v) => break v,
                Err(GatewayError::Transport { message, .. }) if attempt < self.attempts => {
                    tracing::debug!(attempt, %message, "judge transport failure, retrying");
                    thread::sleep(self.backoff * 2u32.pow(attempt - 1));
                }
                Err(GatewayError::Transport { message, .. }) => {
                    return Err(GatewayError::Transport { attempts: attempt, message })
                }
                Err(e) => return Err(e),
            }
        };
        let verdict: RemoteVerdict = serde_json::from_value(value.clone()).map_err(|e| GatewayError::Backend {
            status: 200,
            body: format!("{e}: {value}"),
        })?;
        verdict.label.parse().map_err(|e: String| GatewayError::Backend { status: 200, body: e })
    }
}

/// An LLM used as the judge through the gateway, with the zero-shot NLI
/// Direct prompt. Unreadable verdicts count as neutral.
pub struct LlmJudge {
    gateway: Arc<Gateway>,
    book: Arc<PromptBook>,
    max_tokens: u32,
}

impl LlmJudge {
    pub fn new(gateway: Arc<Gateway>, book: Arc<PromptBook>) -> Self {
        Self { gateway, book, max_tokens: 8 }
    }
}

impl Judge for LlmJudge {
    fn id(&self) -> String {
        format!("llm:{}", self.gateway.backend_id())
    }

    fn judge(&self, premise: &str, hypothesis: &str) -> Result<EntailmentLabel, GatewayError> {
        let flat = |s: &str| s.replace('\n', " ");
        let probe = AmbiguousExample {
            id: "judge".into(),
            task: TaskKind::Nli,
            input: format!("{}\n{}", flat(premise), flat(hypothesis)),
            interpretations: vec![Interpretation {
                index: 0,
                disambiguated_input: None,
                context: None,
                output: TaskOutput::Label(NliLabel::Neutral),
            }],
            gold_index: Some(0),
            is_ambiguous: false,
            exchange: None,
        };
        let prompt = self
            .book
            .build_prompt(PromptVariant::Direct, &[], &probe, Extras::default())
            .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        let c = self.gateway.greedy_complete(&CompletionRequest::greedy(prompt, self.max_tokens, 0))?;
        match self.book.parse(PromptVariant::Direct, TaskKind::Nli, &c.text) {
            Ok(Parsed::Label(l)) => Ok(l),
            _ => {
                tracing::warn!(text = %c.text, "unreadable judge verdict, treating as neutral");
                Ok(NliLabel::Neutral)
            }
        }
    }
}

/// Memoizes another judge in memory and, optionally, on disk.
pub struct CachedJudge {
    inner: Box<dyn Judge>,
    disk: Option<DiskCache>,
    memo: Mutex<HashMap<(String, String), EntailmentLabel>>,
}

impl CachedJudge {
    pub fn new(inner: Box<dyn Judge>, disk: Option<DiskCache>) -> Self {
        Self { inner, disk, memo: Mutex::new(HashMap::new()) }
    }
}

impl Judge for CachedJudge {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn judge(&self, premise: &str, hypothesis: &str) -> Result<EntailmentLabel, GatewayError> {
        let pair = (premise.to_owned(), hypothesis.to_owned());
        if let Some(l) = self.memo.lock().unwrap().get(&pair) {
            return Ok(*l);
        }
        let ns = format!("judge:{}", self.inner.id());
        let key = CacheKey::for_payload(&ns, &pair);
        if let Some(disk) = &self.disk {
            if let Some(l) = disk.load_value::<NliLabel>(&key)? {
                self.memo.lock().unwrap().insert(pair, l);
                return Ok(l);
            }
        }
        let label = self.inner.judge(premise, hypothesis)?;
        if let Some(disk) = &self.disk {
            disk.store_value(&key, &ns, &label)?;
        }
        self.memo.lock().unwrap().insert(pair, label);
        Ok(label)
    }
}

/// Judge selection as written in run configs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JudgeSpec {
    #[default]
    ExactMatch,
    Scripted { path: PathBuf },
    Remote {
        url: String,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
    Llm,
}

fn default_timeout() -> u64 {
    30
}

impl JudgeSpec {
    /// Builds the judge, cached under `cache` when given.
    pub fn build(
        &self,
        gateway: &Arc<Gateway>,
        book: &Arc<PromptBook>,
        cache: Option<DiskCache>,
    ) -> Result<Box<dyn Judge>, String> {
        let inner: Box<dyn Judge> = match self {
            JudgeSpec::ExactMatch => Box::new(ExactMatchJudge),
            JudgeSpec::Scripted { path } => Box::new(ScriptedJudge::load(path)?),
            JudgeSpec::Remote { url, timeout_secs } => {
                Box::new(RemoteNliJudge::new(url.clone(), Duration::from_secs(*timeout_secs)))
            }
            JudgeSpec::Llm => Box::new(LlmJudge::new(gateway.clone(), book.clone())),
        };
        Ok(Box::new(CachedJudge::new(inner, cache)))
    }
}
