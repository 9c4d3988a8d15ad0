//! Generator backends and the fan-out pool.
//!
//! A backend turns a chat message sequence into raw completion text. The
//! HTTP backend speaks the common chat-completions protocol; the replay
//! backend serves recorded responses keyed by `(model_id, query_id)` so
//! whole pipeline runs can be reproduced offline.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::parallel::parallel_map;
use crate::prompting::{parse_response, ChatMessage, ParseOutcome, PromptBundle};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GenerateError {
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    BadResponse(String),
    #[error("no replay entry for model `{model_id}`, query `{query_id}`")]
    MissingFixtureEntry { model_id: String, query_id: String },
}

impl GenerateError {
    /// Whether another attempt could plausibly succeed.
    pub fn is_retryable(&self) -> bool {
        match self {
            GenerateError::Timeout | GenerateError::Transport(_) => true,
            GenerateError::Status { status, .. } => *status == 429 || *status >= 500,
            GenerateError::BadResponse(_) | GenerateError::MissingFixtureEntry { .. } => false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PoolError {
    #[error("generator pool is empty")]
    NoBackends,
    #[error("duplicate model id `{0}` in pool")]
    DuplicateModel(String),
    /// Every backend failed at the transport level. The per-model records
    /// are kept for provenance.
    #[error("all {} backends unavailable", .0.len())]
    AllBackendsUnavailable(Vec<ModelPrediction>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy { max_retries: 0, ..Default::default() }
    }

    /// Delay before retry number `retry` (1-based): `base * 2^(retry-1)`, capped.
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry.saturating_sub(1));
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

pub trait Generator: Send + Sync {
    fn model_id(&self) -> &str;

    /// One attempt, no retries.
    fn complete(&self, messages: &[ChatMessage], query_id: &str) -> Result<String, GenerateError>;

    fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy::default()
    }
}

/// Single attempt for a prompt bundle.
pub fn generate(backend: &dyn Generator, prompt: &PromptBundle, query_id: &str) -> Result<String, GenerateError> {
    backend.complete(&prompt.messages(), query_id)
}

#[derive(Debug, Clone)]
pub struct Attempted {
    pub result: Result<String, GenerateError>,
    pub attempts: u32,
    pub latency: Duration,
}

/// Calls `backend` with exponential backoff on retryable errors.
pub fn call_with_retry(backend: &dyn Generator, messages: &[ChatMessage], query_id: &str) -> Attempted {
    let policy = backend.retry_policy();
    let started = Instant::now();
    let mut attempts = 0;
    loop {
        attempts += 1;
        let result = backend.complete(messages, query_id);
        match &result {
            Err(e) if e.is_retryable() && attempts <= policy.max_retries => {
                let wait = policy.delay(attempts);
                log::debug!("{}: {e}; retry {attempts} in {wait:?}", backend.model_id());
                std::thread::sleep(wait);
            }
            _ => {
                return Attempted {
                    result,
                    attempts,
                    latency: started.elapsed(),
                }
            }
        }
    }
}

/// One backend's answer for one query.
///
/// `available == false` means the backend never produced text (transport
/// failure, missing fixture entry); a response that was received but could
/// not be parsed is `available == true` with a failed [`ParseOutcome`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelPrediction {
    pub model_id: String,
    pub query_id: String,
    pub outcome: ParseOutcome,
    /// Excluded from equality.
    pub latency_ms: u64,
    pub attempt_count: u32,
    pub available: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PartialEq for ModelPrediction {
    fn eq(&self, other: &Self) -> bool {
        self.model_id == other.model_id
            && self.query_id == other.query_id
            && self.outcome == other.outcome
            && self.attempt_count == other.attempt_count
            && self.available == other.available
            && self.error == other.error
    }
}

impl ModelPrediction {
    pub fn from_attempt(model_id: &str, query_id: &str, attempted: Attempted) -> Self {
        let latency_ms = attempted.latency.as_millis() as u64;
        match attempted.result {
            Ok(raw) => ModelPrediction {
                model_id: model_id.to_string(),
                query_id: query_id.to_string(),
                outcome: parse_response(&raw),
                latency_ms,
                attempt_count: attempted.attempts,
                available: true,
                error: None,
            },
            Err(e) => ModelPrediction {
                model_id: model_id.to_string(),
                query_id: query_id.to_string(),
                outcome: ParseOutcome {
                    status: crate::prompting::ParseStatus::Failed,
                    labels: crate::labels::LabelVector::NEUTRAL,
                    raw: String::new(),
                    reason: Some("backend unavailable".to_string()),
                },
                latency_ms,
                attempt_count: attempted.attempts,
                available: false,
                error: Some(e.to_string()),
            },
        }
    }

    /// Rebuilds a prediction from a stored raw response, re-parsing it.
    pub fn from_raw(model_id: &str, query_id: &str, raw: &str) -> Self {
        Self::from_attempt(
            model_id,
            query_id,
            Attempted {
                result: Ok(raw.to_string()),
                attempts: 1,
                latency: Duration::ZERO,
            },
        )
    }

    /// Whether this prediction casts a vote: the backend answered and the
    /// answer parsed (possibly after repair).
    pub fn votes(&self) -> bool {
        self.available && self.outcome.is_usable()
    }
}

/// Queries every backend for one prompt, at most `parallelism` at a time.
/// Returns one prediction per backend, sorted by model id.
pub fn run_pool(
    backends: &[Arc<dyn Generator>],
    prompt: &PromptBundle,
    query_id: &str,
    parallelism: usize,
) -> Result<Vec<ModelPrediction>, PoolError> {
    if backends.is_empty() {
        return Err(PoolError::NoBackends);
    }
    let mut seen = HashSet::new();
    for b in backends {
        if !seen.insert(b.model_id()) {
            return Err(PoolError::DuplicateModel(b.model_id().to_string()));
        }
    }
    let messages = prompt.messages();
    let mut predictions = parallel_map(backends, parallelism, |b| {
        let attempted = call_with_retry(b.as_ref(), &messages, query_id);
        ModelPrediction::from_attempt(b.model_id(), query_id, attempted)
    });
    predictions.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    if predictions.iter().all(|p| !p.available) {
        return Err(PoolError::AllBackendsUnavailable(predictions));
    }
    Ok(predictions)
}

// ---------------------------------------------------------------------------
// Replay

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub model_id: String,
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    /// Injected failure: `"timeout"` or any transport error message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Recorded responses keyed by `(model_id, query_id)`. Immutable once
/// loaded; shared freely between threads.
#[derive(Debug, Clone, Default)]
pub struct ReplayFixture {
    entries: HashMap<(String, String), FixtureEntry>,
}

impl ReplayFixture {
    pub fn from_entries<I: IntoIterator<Item = FixtureEntry>>(entries: I) -> Self {
        ReplayFixture {
            entries: entries
                .into_iter()
                .map(|e| ((e.model_id.clone(), e.query_id.clone()), e))
                .collect(),
        }
    }

    /// JSONL, one [`FixtureEntry`] per line. Later lines override earlier ones.
    pub fn load(path: &Path) -> Result<Self, std::io::Error> {
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry = serde_json::from_str(&line).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("{}:{}: {e}", path.display(), i + 1),
                )
            })?;
            entries.push(entry);
        }
        Ok(Self::from_entries(entries))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn model_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.entries.keys().map(|(m, _)| m.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn lookup(&self, model_id: &str, query_id: &str) -> Result<String, GenerateError> {
        let entry = self
            .entries
            .get(&(model_id.to_string(), query_id.to_string()))
            .ok_or_else(|| GenerateError::MissingFixtureEntry {
                model_id: model_id.to_string(),
                query_id: query_id.to_string(),
            })?;
        match (&entry.error, &entry.response) {
            (Some(e), _) if e == "timeout" => Err(GenerateError::Timeout),
            (Some(e), _) => Err(GenerateError::Transport(e.clone())),
            (None, Some(r)) => Ok(r.clone()),
            (None, None) => Err(GenerateError::MissingFixtureEntry {
                model_id: model_id.to_string(),
                query_id: query_id.to_string(),
            }),
        }
    }
}

/// Serves the fixture entry for `(model_id, query_id)` verbatim, ignoring
/// the prompt. Injected failures are returned without retrying.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    model_id: String,
    fixture: Arc<ReplayFixture>,
}

impl ReplayBackend {
    pub fn new(model_id: impl Into<String>, fixture: Arc<ReplayFixture>) -> Self {
        ReplayBackend {
            model_id: model_id.into(),
            fixture,
        }
    }
}

impl Generator for ReplayBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, _messages: &[ChatMessage], query_id: &str) -> Result<String, GenerateError> {
        self.fixture.lookup(&self.model_id, query_id)
    }

    fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy::none()
    }
}

// ---------------------------------------------------------------------------
// HTTP chat

/// Chat-completions client: `POST {"model", "messages", "temperature": 0}`,
/// answer read from `choices[0].message.content`.
pub struct HttpChatBackend {
    model_id: String,
    api_model: String,
    endpoint: String,
    api_key: Option<String>,
    max_tokens: Option<u32>,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
}

impl HttpChatBackend {
    pub fn new(model_id: impl Into<String>, endpoint: impl Into<String>, timeout: Duration) -> Result<Self, GenerateError> {
        let model_id = model_id.into();
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GenerateError::Transport(e.to_string()))?;
        Ok(HttpChatBackend {
            api_model: model_id.clone(),
            model_id,
            endpoint: endpoint.into(),
            api_key: None,
            max_tokens: None,
            retry: RetryPolicy::default(),
            client,
        })
    }

    /// Model name sent on the wire, when it differs from the pool id.
    pub fn api_model(mut self, name: impl Into<String>) -> Self {
        self.api_model = name.into();
        self
    }

    pub fn api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn max_tokens(mut self, n: Option<u32>) -> Self {
        self.max_tokens = n;
        self
    }

    pub fn retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn request_body(&self, messages: &[ChatMessage]) -> serde_json::Value {
        let mut body = serde_json::json!({
            "model": self.api_model,
            "messages": messages,
            "temperature": 0,
        });
        if let Some(n) = self.max_tokens {
            body["max_tokens"] = n.into();
        }
        body
    }
}

impl Generator for HttpChatBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, messages: &[ChatMessage], _query_id: &str) -> Result<String, GenerateError> {
        let mut req = self.client.post(&self.endpoint).json(&self.request_body(messages));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                GenerateError::Timeout
            } else {
                GenerateError::Transport(e.to_string())
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| {
            if e.is_timeout() {
                GenerateError::Timeout
            } else {
                GenerateError::Transport(e.to_string())
            }
        })?;
        if !status.is_success() {
            let body: String = text.chars().take(200).collect();
            return Err(GenerateError::Status { status: status.as_u16(), body });
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| GenerateError::BadResponse(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| GenerateError::BadResponse("missing choices[0].message.content".into()))
    }

    fn retry_policy(&self) -> RetryPolicy {
        self.retry
    }
}

// ---------------------------------------------------------------------------
// Config

fn default_timeout_secs() -> u64 {
    60
}

fn default_max_retries() -> u32 {
    3
}

/// A backend as declared in the pipeline config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    HttpChat {
        model_id: String,
        endpoint: String,
        /// Model name sent on the wire; defaults to `model_id`.
        #[serde(default)]
        model: Option<String>,
        /// Environment variable holding the API key.
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
        #[serde(default = "default_max_retries")]
        max_retries: u32,
        #[serde(default)]
        max_tokens: Option<u32>,
    },
    Replay {
        model_id: String,
        /// JSONL fixture, relative paths resolved against the config file.
        fixture: PathBuf,
    },
}

impl BackendConfig {
    pub fn model_id(&self) -> &str {
        match self {
            BackendConfig::HttpChat { model_id, .. } | BackendConfig::Replay { model_id, .. } => model_id,
        }
    }
}

/// Instantiates backends, loading each replay fixture file once.
pub fn build_backends(
    configs: &[BackendConfig],
    base_dir: &Path,
) -> Result<BTreeMap<String, Arc<dyn Generator>>, GenerateError> {
    let mut fixtures: HashMap<PathBuf, Arc<ReplayFixture>> = HashMap::new();
    let mut out: BTreeMap<String, Arc<dyn Generator>> = BTreeMap::new();
    for cfg in configs {
        let backend: Arc<dyn Generator> = match cfg {
            BackendConfig::HttpChat {
                model_id,
                endpoint,
                model,
                api_key_env,
                timeout_secs,
                max_retries,
                max_tokens,
            } => {
                let key = api_key_env.as_ref().and_then(|v| std::env::var(v).ok());
                let mut b = HttpChatBackend::new(model_id.clone(), endpoint.clone(), Duration::from_secs(*timeout_secs))?
                    .api_key(key)
                    .max_tokens(*max_tokens)
                    .retry(RetryPolicy { max_retries: *max_retries, ..Default::default() });
                if let Some(m) = model {
                    b = b.api_model(m.clone());
                }
                Arc::new(b)
            }
            BackendConfig::Replay { model_id, fixture } => {
                let path = if fixture.is_absolute() { fixture.clone() } else { base_dir.join(fixture) };
                let fx = match fixtures.get(&path) {
                    Some(f) => f.clone(),
                    None => {
                        let f = Arc::new(
                            ReplayFixture::load(&path)
                                .map_err(|e| GenerateError::Transport(format!("fixture {}: {e}", path.display())))?,
                        );
                        fixtures.insert(path, f.clone());
                        f
                    }
                };
                Arc::new(ReplayBackend::new(model_id.clone(), fx))
            }
        };
        if out.insert(cfg.model_id().to_string(), backend).is_some() {
            return Err(GenerateError::Transport(format!("duplicate backend `{}`", cfg.model_id())));
        }
    }
    Ok(out)
}
