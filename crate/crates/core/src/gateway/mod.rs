//! Access to chat-completion backends.
//!
//! [`Gateway`] fronts a [`Backend`] with a deterministic on-disk cache,
//! in-flight deduplication of identical requests, a concurrency cap with
//! optional pacing, and bounded retries on transport failures. It is `Sync`
//! and meant to be shared by every worker in a run.

mod cache;
pub mod mock;
pub mod openai;

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::DiskCache;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub messages: Vec<ChatMessage>,
    /// 0 means greedy decoding.
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: u64,
    pub sample_index: u32,
}

impl CompletionRequest {
    pub fn greedy(messages: Vec<ChatMessage>, max_tokens: u32, seed: u64) -> Self {
        Self { messages, temperature: 0.0, max_tokens, seed, sample_index: 0 }
    }

    pub fn is_greedy(&self) -> bool {
        self.temperature == 0.0
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be finite and >= 0, got {}",
                self.temperature
            )));
        }
        // A trailing message may be an empty answer slot; earlier ones may not.
        let body = &self.messages[..self.messages.len() - 1];
        if let Some(m) = body
            .iter()
            .find(|m| m.role != Role::System && m.content.trim().is_empty())
        {
            return Err(GatewayError::InvalidRequest(format!("empty {} message", m.role)));
        }
        Ok(())
    }
}

/// One generated turn with natural-log probabilities, one per token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub token_logprobs: Vec<f64>,
}

impl Completion {
    pub fn logprob_sum(&self) -> f64 {
        self.token_logprobs.iter().sum()
    }
}

#[derive(Debug, Clone, Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned status {status}: {body}")]
    Backend { status: u16, body: String },
    #[error("corrupt cache entry {path}: {message}")]
    CacheCorruption { path: String, message: String },
    #[error("backend does not support {0}")]
    UnsupportedCapability(String),
    #[error("sampling stopped after {} of the requested completions: {message}", completed.len())]
    PartialFailure { completed: Vec<Completion>, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cache i/o: {0}")]
    Io(String),
}

impl GatewayError {
    pub fn is_transport(&self) -> bool {
        matches!(self, GatewayError::Transport { .. })
    }
}

/// A model endpoint. Implementations are called through [`Gateway`], which
/// layers caching, retries, and concurrency control on top.
pub trait Backend: Send + Sync {
    /// Stable identifier folded into every cache key.
    fn id(&self) -> &str;

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, GatewayError>;

    /// Per-token log-probabilities of `continuation` forced after `prefix`.
    fn score(&self, prefix: &[ChatMessage], continuation: &str) -> Result<Vec<f64>, GatewayError>;
}

/// Content hash identifying one backend call.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey(pub String);

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Serialize)]
struct KeyMaterial<'a> {
    backend_id: &'a str,
    kind: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
    seed: u64,
    sample_index: u32,
    continuation: Option<&'a str>,
}

impl CacheKey {
    pub fn for_completion(backend_id: &str, request: &CompletionRequest) -> Self {
        Self::hash(&KeyMaterial {
            backend_id,
            kind: "complete",
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            seed: request.seed,
            sample_index: request.sample_index,
            continuation: None,
        })
    }

    pub fn for_score(backend_id: &str, prefix: &[ChatMessage], continuation: &str) -> Self {
        Self::hash(&KeyMaterial {
            backend_id,
            kind: "score",
            messages: prefix,
            temperature: 0.0,
            max_tokens: 0,
            seed: 0,
            sample_index: 0,
            continuation: Some(continuation),
        })
    }

    /// Key for an arbitrary serializable payload, used by cached judges.
    pub fn for_payload<T: Serialize>(namespace: &str, payload: &T) -> Self {
        let body = serde_json::to_string(payload).expect("cache payload serializes");
        let mut h = Sha256::new();
        h.update(namespace.as_bytes());
        h.update([0u8]);
        h.update(body.as_bytes());
        Self(hex::encode(h.finalize()))
    }

    fn hash(material: &KeyMaterial<'_>) -> Self {
        Self::for_payload("chat", material)
    }
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    /// Maximum simultaneous backend calls.
    pub max_concurrency: usize,
    /// Total attempts per call on transport failure.
    pub attempts: u32,
    pub backoff_base: Duration,
    /// Minimum spacing between backend call starts.
    pub min_interval: Option<Duration>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            max_concurrency: 8,
            attempts: 3,
            backoff_base: Duration::from_millis(500),
            min_interval: None,
        }
    }
}

struct Limiter {
    permits: Mutex<usize>,
    released: Condvar,
    last_start: Mutex<Option<Instant>>,
    min_interval: Option<Duration>,
}

impl Limiter {
    fn new(max: usize, min_interval: Option<Duration>) -> Self {
        Self {
            permits: Mutex::new(max.max(1)),
            released: Condvar::new(),
            last_start: Mutex::new(None),
            min_interval,
        }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut permits = self.permits.lock().unwrap();
            while *permits == 0 {
                permits = self.released.wait(permits).unwrap();
            }
            *permits -= 1;
        }
        if let Some(gap) = self.min_interval {
            let mut last = self.last_start.lock().unwrap();
            if let Some(prev) = *last {
                let elapsed = prev.elapsed();
                if elapsed < gap {
                    std::thread::sleep(gap - elapsed);
                }
            }
            *last = Some(Instant::now());
        }
        let out = f();
        *self.permits.lock().unwrap() += 1;
        self.released.notify_one();
        out
    }
}

type Shared = Result<Completion, GatewayError>;

#[derive(Default)]
struct InFlight {
    result: Mutex<Option<Shared>>,
    done: Condvar,
}

/// Call counters, useful for asserting cache and dedup behaviour.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GatewayStats {
    pub backend_calls: u64,
    pub cache_hits: u64,
}

pub struct Gateway {
    backend: Arc<dyn Backend>,
    cache: Option<DiskCache>,
    config: GatewayConfig,
    limiter: Limiter,
    inflight: Mutex<HashMap<CacheKey, Arc<InFlight>>>,
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, cache: Option<DiskCache>, config: GatewayConfig) -> Self {
        let limiter = Limiter::new(config.max_concurrency, config.min_interval);
        Self {
            backend,
            cache,
            config,
            limiter,
            inflight: Mutex::new(HashMap::new()),
            backend_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        }
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn cache(&self) -> Option<&DiskCache> {
        self.cache.as_ref()
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            backend_calls: self.backend_calls.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
        }
    }

    /// Greedy decoding; the request must carry temperature 0.
    pub fn greedy_complete(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        if !request.is_greedy() {
            return Err(GatewayError::InvalidRequest(
                "greedy_complete requires temperature 0".into(),
            ));
        }
        self.complete(request)
    }

    /// Any single completion, greedy or sampled.
    pub fn complete(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        request.validate()?;
        let key = CacheKey::for_completion(self.backend.id(), request);
        self.cached(key, || self.backend.complete(request))
    }

    /// `n` draws at `temperature`, with sample indices `0..n`.
    pub fn sample_completions(
        &self,
        request: &CompletionRequest,
        n: usize,
        temperature: f64,
    ) -> Result<Vec<Completion>, GatewayError> {
        if n == 0 {
            return Err(GatewayError::InvalidRequest("sample count must be >= 1".into()));
        }
        if temperature.is_nan() || temperature <= 0.0 {
            return Err(GatewayError::InvalidRequest(format!(
                "sampling temperature must be > 0, got {temperature}"
            )));
        }
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let req = CompletionRequest {
                temperature,
                sample_index: i as u32,
                ..request.clone()
            };
            match self.complete(&req) {
                Ok(c) => out.push(c),
                Err(e) if i == 0 => return Err(e),
                Err(e) => {
                    return Err(GatewayError::PartialFailure {
                        completed: out,
                        message: e.to_string(),
                    })
                }
            }
        }
        Ok(out)
    }

    /// Total natural-log probability of `continuation` after `prefix`.
    pub fn score_continuation(
        &self,
        prefix: &[ChatMessage],
        continuation: &str,
    ) -> Result<f64, GatewayError> {
        if continuation.is_empty() {
            return Ok(0.0);
        }
        let key = CacheKey::for_score(self.backend.id(), prefix, continuation);
        let scored = self.cached(key, || {
            self.backend.score(prefix, continuation).map(|token_logprobs| Completion {
                text: continuation.to_owned(),
                token_logprobs,
            })
        })?;
        Ok(scored.logprob_sum())
    }

    fn cached(
        &self,
        key: CacheKey,
        call: impl Fn() -> Result<Completion, GatewayError>,
    ) -> Result<Completion, GatewayError> {
        if let Some(hit) = self.lookup(&key)? {
            return Ok(hit);
        }
        let (slot, leader) = {
            let mut map = self.inflight.lock().unwrap();
            match map.get(&key) {
                Some(slot) => (slot.clone(), false),
                None => {
                    let slot = Arc::new(InFlight::default());
                    map.insert(key.clone(), slot.clone());
                    (slot, true)
                }
            }
        };
        if !leader {
            let mut result = slot.result.lock().unwrap();
            while result.is_none() {
                result = slot.done.wait(result).unwrap();
            }
            return result.clone().unwrap();
        }

        // Another leader may have finished between our cache miss and taking
        // the slot.
        let result = match self.lookup(&key) {
            Ok(Some(hit)) => Ok(hit),
            Ok(None) => self.call_with_retry(&call).and_then(|c| {
                check_logprobs(&c)?;
                if let Some(cache) = &self.cache {
                    cache.store(&key, self.backend.id(), &c)?;
                }
                Ok(c)
            }),
            Err(e) => Err(e),
        };
        *slot.result.lock().unwrap() = Some(result.clone());
        slot.done.notify_all();
        self.inflight.lock().unwrap().remove(&key);
        result
    }

    fn lookup(&self, key: &CacheKey) -> Result<Option<Completion>, GatewayError> {
        let Some(cache) = &self.cache else {
            return Ok(None);
        };
        let hit = cache.load(key)?;
        if hit.is_some() {
            self.cache_hits.fetch_add(1, Ordering::Relaxed);
        }
        Ok(hit)
    }

    fn call_with_retry(
        &self,
        call: &impl Fn() -> Result<Completion, GatewayError>,
    ) -> Result<Completion, GatewayError> {
        let attempts = self.config.attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.config.backoff_base * 2u32.pow(attempt - 1));
            }
            self.backend_calls.fetch_add(1, Ordering::Relaxed);
            match self.limiter.run(call) {
                Err(GatewayError::Transport { message, .. }) => {
                    tracing::warn!(attempt = attempt + 1, %message, "transport failure");
                    last = message;
                }
                other => return other,
            }
        }
        Err(GatewayError::Transport { attempts, message: last })
    }
}

fn check_logprobs(c: &Completion) -> Result<(), GatewayError> {
    match c.token_logprobs.iter().find(|lp| lp.is_nan() || **lp > 0.0) {
        Some(bad) => Err(GatewayError::Backend {
            status: 200,
            body: format!("token log-probability {bad} is not <= 0"),
        }),
        None => Ok(()),
    }
}
