//! OpenAI-compatible HTTP backend.
//!
//! Completions use `POST {base_url}/chat/completions` with `messages`,
//! `temperature`, `n`, `logprobs` and `seed`. Forced-continuation scoring
//! uses the legacy `POST {base_url}/completions` endpoint with `echo: true`
//! and `max_tokens: 0`, which vLLM-style servers support; the chat prefix is
//! flattened with [`flatten_transcript`].

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, ChatMessage, Completion, CompletionRequest, GatewayError, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    /// Backend cannot force-score; callers fall back to sampling.
    #[default]
    None,
    /// Score via `/completions` with `echo`.
    CompletionsEcho,
}

#[derive(Debug, Clone)]
pub struct OpenAiConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub scoring: ScoringMode,
}

pub struct OpenAiBackend {
    id: String,
    config: OpenAiConfig,
    agent: ureq::Agent,
}

impl OpenAiBackend {
    pub fn new(config: OpenAiConfig) -> Self {
        let id = format!("openai:{}@{}", config.model, config.base_url.trim_end_matches('/'));
        Self { id, agent: agent(config.timeout), config }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{path}", self.config.base_url.trim_end_matches('/'))
    }
}

pub(crate) fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

/// POSTs a JSON body, classifying failures: connection-level problems are
/// [`GatewayError::Transport`] (retryable), non-2xx statuses are
/// [`GatewayError::Backend`].
pub(crate) fn post_json(
    agent: &ureq::Agent,
    url: &str,
    api_key: Option<&str>,
    body: &Value,
) -> Result<Value, GatewayError> {
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(key) = api_key {
        req = req.header("Authorization", &format!("Bearer {key}"));
    }
    let mut resp = req.send_json(body).map_err(classify)?;
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().map_err(classify)?;
    if !(200..300).contains(&status) {
        return Err(GatewayError::Backend { status, body: text });
    }
    serde_json::from_str(&text).map_err(|e| GatewayError::Backend {
        status,
        body: format!("invalid JSON ({e}): {text}"),
    })
}

fn classify(e: ureq::Error) -> GatewayError {
    match e {
        ureq::Error::Io(_)
        | ureq::Error::Timeout(_)
        | ureq::Error::HostNotFound
        | ureq::Error::ConnectionFailed => GatewayError::Transport {
            attempts: 1,
            message: e.to_string(),
        },
        ureq::Error::StatusCode(status) => GatewayError::Backend { status, body: String::new() },
        other => GatewayError::Backend { status: 0, body: other.to_string() },
    }
}

/// Flattens a chat transcript into a single prompt string. A trailing
/// message is treated as an open slot: it is emitted without a terminating
/// newline so a continuation attaches directly to it.
pub fn flatten_transcript(messages: &[ChatMessage]) -> String {
    let mut out = String::new();
    for (i, m) in messages.iter().enumerate() {
        let label = match m.role {
            Role::System => "System",
            Role::User => "User",
            Role::Assistant => "Assistant",
        };
        out.push_str(label);
        out.push_str(": ");
        out.push_str(&m.content);
        if i + 1 < messages.len() {
            out.push('\n');
        }
    }
    out
}

impl Backend for OpenAiBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| json!({"role": m.role, "content": m.content}))
            .collect();
        let body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "n": 1,
            "logprobs": true,
            "seed": request.seed.wrapping_add(request.sample_index as u64),
        });
        let v = post_json(&self.agent, &self.url("chat/completions"), self.config.api_key.as_deref(), &body)?;
        parse_chat_response(&v)
    }

    fn score(&self, prefix: &[ChatMessage], continuation: &str) -> Result<Vec<f64>, GatewayError> {
        if self.config.scoring == ScoringMode::None {
            return Err(GatewayError::UnsupportedCapability("forced continuation scoring".into()));
        }
        let head = flatten_transcript(prefix);
        let body = json!({
            "model": self.config.model,
            "prompt": format!("{head}{continuation}"),
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
            "temperature": 0,
        });
        let v = post_json(&self.agent, &self.url("completions"), self.config.api_key.as_deref(), &body)?;
        parse_echo_response(&v, head.chars().count())
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
    #[serde(default)]
    logprobs: Option<ChatLogprobs>,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatLogprobs {
    #[serde(default)]
    content: Option<Vec<TokenLogprob>>,
}

#[derive(Deserialize)]
struct TokenLogprob {
    logprob: f64,
}

pub(crate) fn parse_chat_response(v: &Value) -> Result<Completion, GatewayError> {
    let bad = |m: String| GatewayError::Backend { status: 200, body: m };
    let resp: ChatResponse = serde_json::from_value(v.clone()).map_err(|e| bad(e.to_string()))?;
    let choice = resp.choices.into_iter().next().ok_or_else(|| bad("no choices".into()))?;
    let token_logprobs = choice
        .logprobs
        .and_then(|l| l.content)
        .unwrap_or_default()
        .into_iter()
        .map(|t| t.logprob.min(0.0))
        .collect();
    Ok(Completion {
        text: choice.message.content.unwrap_or_default(),
        token_logprobs,
    })
}

#[derive(Deserialize)]
struct EchoResponse {
    choices: Vec<EchoChoice>,
}

#[derive(Deserialize)]
struct EchoChoice {
    logprobs: EchoLogprobs,
}

#[derive(Deserialize)]
struct EchoLogprobs {
    token_logprobs: Vec<Option<f64>>,
    text_offset: Vec<usize>,
}

pub(crate) fn parse_echo_response(v: &Value, prefix_chars: usize) -> Result<Vec<f64>, GatewayError> {
    let bad = |m: String| GatewayError::Backend { status: 200, body: m };
    let resp: EchoResponse = serde_json::from_value(v.clone()).map_err(|e| bad(e.to_string()))?;
    let choice = resp.choices.into_iter().next().ok_or_else(|| bad("no choices".into()))?;
    let lp = choice.logprobs;
    if lp.token_logprobs.len() != lp.text_offset.len() {
        return Err(bad("token_logprobs and text_offset differ in length".into()));
    }
    lp.token_logprobs
        .iter()
        .zip(&lp.text_offset)
        .filter(|(_, &off)| off >= prefix_chars)
        .map(|(lp, _)| lp.map(|x| x.min(0.0)).ok_or_else(|| bad("null continuation logprob".into())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, GatewayConfig};
    use std::sync::Arc;

    #[test]
    fn chat_response_parsing() {
        let v = json!({"choices": [{"message": {"role": "assistant", "content": "Answer: 58."},
            "logprobs": {"content": [{"token": "Answer", "logprob": -0.01}, {"token": ":", "logprob": -0.02}]}}]});
        let c = parse_chat_response(&v).unwrap();
        assert_eq!(c.text, "Answer: 58.");
        assert_eq!(c.token_logprobs, vec![-0.01, -0.02]);
    }

    #[test]
    fn echo_parsing_keeps_only_continuation_tokens() {
        let v = json!({"choices": [{"logprobs": {
            "tokens": ["User", ":", " q", " No"],
            "token_logprobs": [null, -1.0, -2.0, -0.1],
            "text_offset": [0, 4, 5, 7]}}]});
        assert_eq!(parse_echo_response(&v, 7).unwrap(), vec![-0.1]);
    }

    #[test]
    fn transcript_leaves_trailing_slot_open() {
        let t = flatten_transcript(&[
            ChatMessage::system("Answer the question."),
            ChatMessage::user("Question: q"),
            ChatMessage::assistant("Is a Follow-Up Question Needed Here?"),
        ]);
        assert!(t.ends_with("Here?"));
        assert_eq!(t.lines().count(), 3);
    }

    #[test]
    fn unreachable_endpoint_is_transport_error_after_retries() {
        // Port 9 (discard) is closed on the loopback interface here.
        let backend = OpenAiBackend::new(OpenAiConfig {
            base_url: "http://127.0.0.1:9/v1".into(),
            model: "m".into(),
            api_key: None,
            timeout: Duration::from_secs(2),
            scoring: ScoringMode::None,
        });
        let gw = Gateway::new(
            Arc::new(backend),
            None,
            GatewayConfig { backoff_base: Duration::from_millis(1), ..Default::default() },
        );
        let req = CompletionRequest::greedy(vec![ChatMessage::user("hi")], 8, 0);
        match gw.greedy_complete(&req) {
            Err(GatewayError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("expected transport error, got {other:?}"),
        }
        assert_eq!(gw.stats().backend_calls, 3);
    }
}
