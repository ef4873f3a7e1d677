//! Scripted backend for reproducible end-to-end runs.
//!
//! A script is a JSON document:
//!
//! ```json
//! {
//!   "backend_id": "mock",
//!   "supports_scoring": true,
//!   "default_token_logprob": -1.0,
//!   "rules": [
//!     {
//!       "when": {"contains": "There, on the trunk.", "within_last": 3,
//!                "last_role": "user", "last_contains": "Follow-Up Response:"},
//!       "greedy": "Follow-Up Question: What type of trunk are you referring to?",
//!       "pool": ["The back of a car.", {"text": "A large suitcase.", "token_logprobs": [-0.2]}],
//!       "continuations": [{"text": " No", "token_logprobs": [-0.1]}]
//!     }
//!   ]
//! }
//! ```
//!
//! The first rule whose conditions all hold answers the request. Greedy
//! requests get `greedy`; sampled requests get `samples[sample_index % len]`
//! or, for a `pool`, the entry at `sample_index` of the pool shuffled with the
//! request seed. Responses without explicit log-probabilities get one entry
//! per whitespace token, valued `default_token_logprob` (or 0).

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::{Backend, ChatMessage, Completion, CompletionRequest, GatewayError, Role};

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ScriptedText {
    Plain(String),
    Full {
        text: String,
        #[serde(default)]
        token_logprobs: Option<Vec<f64>>,
    },
}

impl ScriptedText {
    fn text(&self) -> &str {
        match self {
            ScriptedText::Plain(t) | ScriptedText::Full { text: t, .. } => t,
        }
    }

    fn to_completion(&self, default_lp: f64) -> Completion {
        match self {
            ScriptedText::Full { text, token_logprobs: Some(lps) } => Completion {
                text: text.clone(),
                token_logprobs: lps.clone(),
            },
            other => Completion {
                text: other.text().to_owned(),
                token_logprobs: whitespace_logprobs(other.text(), default_lp),
            },
        }
    }
}

fn whitespace_logprobs(text: &str, lp: f64) -> Vec<f64> {
    text.split_whitespace().map(|_| lp).collect()
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Matcher {
    /// Substring of the concatenated contents of the last `within_last`
    /// messages (all messages when unset).
    #[serde(default)]
    pub contains: Option<String>,
    #[serde(default)]
    pub within_last: Option<usize>,
    #[serde(default)]
    pub last_contains: Option<String>,
    #[serde(default)]
    pub last_role: Option<Role>,
}

impl Matcher {
    fn matches(&self, messages: &[ChatMessage]) -> bool {
        let Some(last) = messages.last() else {
            return false;
        };
        if let Some(role) = self.last_role {
            if last.role != role {
                return false;
            }
        }
        if let Some(needle) = &self.last_contains {
            if !last.content.contains(needle.as_str()) {
                return false;
            }
        }
        if let Some(needle) = &self.contains {
            let n = self.within_last.unwrap_or(messages.len()).min(messages.len());
            let found = messages[messages.len() - n..]
                .iter()
                .any(|m| m.content.contains(needle.as_str()));
            if !found {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedError {
    #[serde(default)]
    pub transport: Option<String>,
    #[serde(default)]
    pub status: Option<u16>,
    #[serde(default)]
    pub body: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Continuation {
    pub text: String,
    pub token_logprobs: Vec<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    #[serde(default)]
    pub when: Matcher,
    #[serde(default)]
    pub greedy: Option<ScriptedText>,
    #[serde(default)]
    pub samples: Vec<ScriptedText>,
    #[serde(default)]
    pub pool: Vec<ScriptedText>,
    #[serde(default)]
    pub continuations: Vec<Continuation>,
    #[serde(default)]
    pub error: Option<ScriptedError>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default = "default_id")]
    pub backend_id: String,
    #[serde(default = "yes")]
    pub supports_scoring: bool,
    #[serde(default)]
    pub default_token_logprob: Option<f64>,
    #[serde(default)]
    pub rules: Vec<Rule>,
}

fn default_id() -> String {
    "mock".into()
}

fn yes() -> bool {
    true
}

impl MockScript {
    pub fn from_json(text: &str) -> Result<Self, String> {
        let script: MockScript = serde_json::from_str(text).map_err(|e| e.to_string())?;
        for (i, rule) in script.rules.iter().enumerate() {
            let entries = rule
                .greedy
                .iter()
                .chain(&rule.samples)
                .chain(&rule.pool)
                .filter_map(|t| match t {
                    ScriptedText::Full { token_logprobs: Some(l), .. } => Some(l),
                    _ => None,
                })
                .chain(rule.continuations.iter().map(|c| &c.token_logprobs));
            for lps in entries {
                if lps.iter().any(|lp| lp.is_nan() || *lp > 0.0) {
                    return Err(format!("rule {i}: token log-probabilities must be <= 0"));
                }
            }
        }
        if script.default_token_logprob.is_some_and(|lp| lp.is_nan() || lp > 0.0) {
            return Err("default_token_logprob must be <= 0".into());
        }
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

pub struct MockBackend {
    script: MockScript,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        Self { script }
    }

    fn rule(&self, messages: &[ChatMessage]) -> Result<(usize, &Rule), GatewayError> {
        self.script
            .rules
            .iter()
            .enumerate()
            .find(|(_, r)| r.when.matches(messages))
            .ok_or_else(|| GatewayError::Backend {
                status: 404,
                body: format!(
                    "no mock rule matches prompt ending {:?}",
                    messages.last().map(|m| m.content.as_str()).unwrap_or("")
                ),
            })
    }

    fn default_lp(&self) -> f64 {
        self.script.default_token_logprob.unwrap_or(0.0)
    }
}

fn scripted_error(e: &ScriptedError) -> GatewayError {
    match &e.transport {
        Some(message) => GatewayError::Transport { attempts: 1, message: message.clone() },
        None => GatewayError::Backend {
            status: e.status.unwrap_or(500),
            body: e.body.clone().unwrap_or_default(),
        },
    }
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        &self.script.backend_id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        let (rule_index, rule) = self.rule(&request.messages)?;
        if let Some(e) = &rule.error {
            return Err(scripted_error(e));
        }
        let lp = self.default_lp();
        let unscripted = || GatewayError::Backend {
            status: 404,
            body: format!("mock rule {rule_index} has no response for this request"),
        };
        if request.is_greedy() {
            let text = rule
                .greedy
                .as_ref()
                .or_else(|| rule.samples.first())
                .or_else(|| rule.pool.first())
                .ok_or_else(unscripted)?;
            return Ok(text.to_completion(lp));
        }
        let i = request.sample_index as usize;
        if !rule.samples.is_empty() {
            return Ok(rule.samples[i % rule.samples.len()].to_completion(lp));
        }
        if !rule.pool.is_empty() {
            let mut order: Vec<usize> = (0..rule.pool.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(request.seed ^ (rule_index as u64).rotate_left(32));
            order.shuffle(&mut rng);
            return Ok(rule.pool[order[i % order.len()]].to_completion(lp));
        }
        rule.greedy.as_ref().map(|t| t.to_completion(lp)).ok_or_else(unscripted)
    }

    fn score(&self, prefix: &[ChatMessage], continuation: &str) -> Result<Vec<f64>, GatewayError> {
        if !self.script.supports_scoring {
            return Err(GatewayError::UnsupportedCapability("forced continuation scoring".into()));
        }
        let (rule_index, rule) = self.rule(prefix)?;
        if let Some(e) = &rule.error {
            return Err(scripted_error(e));
        }
        if let Some(c) = rule.continuations.iter().find(|c| c.text == continuation) {
            return Ok(c.token_logprobs.clone());
        }
        match self.script.default_token_logprob {
            Some(lp) => Ok(whitespace_logprobs(continuation, lp)),
            None => Err(GatewayError::Backend {
                status: 404,
                body: format!("mock rule {rule_index} has no score for {continuation:?}"),
            }),
        }
    }
}
