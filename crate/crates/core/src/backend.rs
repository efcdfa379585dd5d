//! Text-generation and embedding backends.
//!
//! Two implementations ship with the crate:
//!
//! * [`HttpBackend`] speaks the OpenAI-compatible chat-completions and
//!   embeddings protocols, with bounded in-flight requests and exponential
//!   backoff on timeouts, HTTP 429 and 5xx.
//! * [`MockBackend`] is deterministic and model-free. It reads the structured
//!   `payload` attached to each [`GenerationRequest`] and replies in the same
//!   textual format a real model is asked for, so the parsing code paths are
//!   exercised identically.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::index::tokenize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("transient failures exhausted after {attempts} attempts: {last}")]
    TransientExhausted { attempts: u32, last: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("request failed: {0}")]
    Fatal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    SummarizeAgent,
    IntegrateEvents,
    AgentQueries,
    Answer,
    FilterJudge,
    Validate,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] = [
        TaskKind::SummarizeAgent,
        TaskKind::IntegrateEvents,
        TaskKind::AgentQueries,
        TaskKind::Answer,
        TaskKind::FilterJudge,
        TaskKind::Validate,
    ];

    pub fn asset_name(&self) -> &'static str {
        match self {
            TaskKind::SummarizeAgent => "summarize_agent",
            TaskKind::IntegrateEvents => "integrate_events",
            TaskKind::AgentQueries => "agent_queries",
            TaskKind::Answer => "answer",
            TaskKind::FilterJudge => "filter_judge",
            TaskKind::Validate => "validate",
        }
    }

    fn default_max_tokens(&self) -> u32 {
        match self {
            TaskKind::SummarizeAgent => 512,
            TaskKind::IntegrateEvents => 1024,
            TaskKind::AgentQueries => 512,
            TaskKind::Answer | TaskKind::FilterJudge => 256,
            TaskKind::Validate => 16,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.asset_name())
    }
}

/// One generation call. `prompt` is what a real model sees; `payload` holds
/// the structured inputs that were rendered into it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationRequest {
    pub task: TaskKind,
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub payload: Value,
}

impl GenerationRequest {
    pub fn new(task: TaskKind, prompt: String, payload: Value) -> Self {
        GenerationRequest {
            task,
            prompt,
            max_tokens: task.default_max_tokens(),
            temperature: 0.0,
            payload,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.trim().is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt".into()));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be > 0".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub text: String,
    pub usage: TokenUsage,
    /// Total attempts made, including the successful one.
    pub attempts: u32,
    pub correlation_id: u64,
}

pub trait Generator: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<Generation, BackendError>;
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError>;
}

impl<G: Generator + ?Sized> Generator for Arc<G> {
    fn generate(&self, request: &GenerationRequest) -> Result<Generation, BackendError> {
        (**self).generate(request)
    }
}

impl<G: Generator + ?Sized> Generator for &G {
    fn generate(&self, request: &GenerationRequest) -> Result<Generation, BackendError> {
        (**self).generate(request)
    }
}

impl<E: Embedder + ?Sized> Embedder for &E {
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        (**self).embed(text)
    }
}

fn whitespace_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

// ---------------------------------------------------------------------------
// Prompt assets

/// Prompt templates keyed by task. Placeholders are written `{{name}}`.
#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: HashMap<TaskKind, String>,
}

impl Default for PromptSet {
    fn default() -> Self {
        let mut templates = HashMap::new();
        templates.insert(
            TaskKind::SummarizeAgent,
            include_str!("../prompts/summarize_agent.txt").to_string(),
        );
        templates.insert(
            TaskKind::IntegrateEvents,
            include_str!("../prompts/integrate_events.txt").to_string(),
        );
        templates.insert(
            TaskKind::AgentQueries,
            include_str!("../prompts/agent_queries.txt").to_string(),
        );
        templates.insert(TaskKind::Answer, include_str!("../prompts/answer.txt").to_string());
        templates.insert(
            TaskKind::FilterJudge,
            include_str!("../prompts/filter_judge.txt").to_string(),
        );
        templates.insert(TaskKind::Validate, include_str!("../prompts/validate.txt").to_string());
        PromptSet { templates }
    }
}

impl PromptSet {
    /// Loads `<task>.txt` files from `dir`; tasks without a file keep the
    /// built-in template.
    pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
        let mut set = PromptSet::default();
        for task in TaskKind::ALL {
            let path = dir.join(format!("{}.txt", task.asset_name()));
            if path.exists() {
                set.templates.insert(task, std::fs::read_to_string(path)?);
            }
        }
        Ok(set)
    }

    pub fn template(&self, task: TaskKind) -> &str {
        &self.templates[&task]
    }

    pub fn render(&self, task: TaskKind, vars: &[(&str, &str)]) -> String {
        let mut out = self.template(task).to_string();
        for (key, value) in vars {
            out = out.replace(&format!("{{{{{key}}}}}"), value);
        }
        out
    }
}

/// Renders five options as `A) ...` lines.
pub fn format_options(options: &[String]) -> String {
    options
        .iter()
        .enumerate()
        .map(|(i, o)| format!("{}) {}", crate::corpus::option_letter(i), o))
        .collect::<Vec<_>>()
        .join("\n")
}

// ---------------------------------------------------------------------------
// Mock backend

const MOCK_SUMMARY_TOKENS: usize = 512;
const MOCK_WHAT_TOKENS: usize = 20;
pub const MOCK_EMBED_DIM: usize = 256;

/// Option index with the largest token overlap with `context`, lowest index
/// on ties. Overlap counts distinct option tokens present in the context.
pub fn overlap_choice(options: &[String], context: &str) -> usize {
    let ctx: BTreeSet<String> = tokenize(context).into_iter().collect();
    let mut best = (0usize, 0usize);
    for (i, opt) in options.iter().enumerate() {
        let toks: BTreeSet<String> = tokenize(opt).into_iter().collect();
        let overlap = toks.iter().filter(|t| ctx.contains(*t)).count();
        if overlap > best.1 {
            best = (i, overlap);
        }
    }
    best.0
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub(crate) fn stable_hash(seed: u64, text: &str) -> u64 {
    fnv1a(seed, text.as_bytes())
}

/// Deterministic stand-in for a model. See the module docs.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    seed: u64,
    calls: Arc<AtomicUsize>,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        MockBackend {
            seed,
            calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn reply(&self, req: &GenerationRequest) -> Result<String, BackendError> {
        let p = &req.payload;
        let missing = |k: &str| BackendError::InvalidRequest(format!("mock payload missing {k}"));
        let str_list = |k: &str| -> Result<Vec<String>, BackendError> {
            p.get(k)
                .and_then(Value::as_array)
                .ok_or_else(|| missing(k))
                .map(|a| a.iter().filter_map(|v| v.as_str().map(String::from)).collect())
        };
        let text = |k: &str| p.get(k).and_then(Value::as_str).unwrap_or_default().to_string();
        match req.task {
            TaskKind::SummarizeAgent => {
                let joined = str_list("texts")?.join("; ");
                let toks: Vec<&str> = joined.split_whitespace().collect();
                if toks.len() > MOCK_SUMMARY_TOKENS {
                    Ok(toks[..MOCK_SUMMARY_TOKENS].join(" "))
                } else {
                    Ok(joined)
                }
            }
            TaskKind::IntegrateEvents => {
                let bucket = p
                    .get("bucket")
                    .and_then(Value::as_str)
                    .ok_or_else(|| missing("bucket"))?;
                let entries = p
                    .get("entries")
                    .and_then(Value::as_array)
                    .ok_or_else(|| missing("entries"))?;
                let mut who = Vec::new();
                let mut all = Vec::new();
                for e in entries {
                    if let Some(name) = e.get("name").and_then(Value::as_str) {
                        who.push(name.to_string());
                    }
                    if let Some(t) = e.get("text").and_then(Value::as_str) {
                        all.push(t.to_string());
                    }
                }
                let joined = all.join(" ");
                let what: Vec<&str> = joined.split_whitespace().take(MOCK_WHAT_TOKENS).collect();
                Ok(json!({"events": [{
                    "when": bucket,
                    "what": what.join(" "),
                    "where": "unknown",
                    "who": who,
                    "how": "unknown",
                }]})
                .to_string())
            }
            TaskKind::AgentQueries => {
                let question = text("question");
                let names: Vec<String> = p
                    .get("roster")
                    .and_then(Value::as_array)
                    .ok_or_else(|| missing("roster"))?
                    .iter()
                    .filter_map(|a| a.get("name").and_then(Value::as_str).map(String::from))
                    .collect();
                let hit_who: BTreeSet<String> = str_list("hit_who")
                    .unwrap_or_default()
                    .into_iter()
                    .map(|n| n.to_lowercase())
                    .collect();
                let mut chosen: Vec<&String> = names
                    .iter()
                    .filter(|n| crate::qafilter::contains_word(&question, n) || hit_who.contains(&n.to_lowercase()))
                    .collect();
                if chosen.is_empty() {
                    chosen = names.iter().collect();
                }
                let queries: Vec<Value> = chosen
                    .into_iter()
                    .map(|n| json!({"agent": n, "query": question}))
                    .collect();
                Ok(json!({ "queries": queries }).to_string())
            }
            TaskKind::Answer | TaskKind::FilterJudge => {
                let options = str_list("options")?;
                let idx = overlap_choice(&options, &text("context"));
                Ok(format!("Answer: ({})", crate::corpus::option_letter(idx)))
            }
            TaskKind::Validate => {
                let options = str_list("options")?;
                let answer = p
                    .get("answer_index")
                    .and_then(Value::as_u64)
                    .ok_or_else(|| missing("answer_index"))? as usize;
                let keep = overlap_choice(&options, &text("context")) == answer;
                Ok(if keep { "KEEP" } else { "FLAG" }.to_string())
            }
        }
    }
}

impl Generator for MockBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<Generation, BackendError> {
        request.validate()?;
        let id = self.calls.fetch_add(1, Ordering::SeqCst) as u64;
        let text = self.reply(request)?;
        Ok(Generation {
            usage: TokenUsage {
                prompt_tokens: whitespace_tokens(&request.prompt),
                completion_tokens: whitespace_tokens(&text),
            },
            text,
            attempts: 1,
            correlation_id: id,
        })
    }
}

impl Embedder for MockBackend {
    /// Signed feature hashing of tokens into 256 dimensions, L2-normalized.
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(BackendError::InvalidRequest("cannot embed text without tokens".into()));
        }
        let mut v = vec![0.0f64; MOCK_EMBED_DIM];
        for t in &tokens {
            let h = stable_hash(self.seed, t);
            let slot = (h % MOCK_EMBED_DIM as u64) as usize;
            let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
            v[slot] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(BackendError::MalformedResponse(
                "hashed embedding cancelled to zero".into(),
            ));
        }
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(v)
    }
}

/// Generator driven by a closure; handy for scripting test scenarios.
pub struct ScriptedGenerator<F> {
    respond: F,
    calls: AtomicUsize,
}

impl<F> ScriptedGenerator<F>
where
    F: Fn(&GenerationRequest) -> Result<String, BackendError> + Send + Sync,
{
    pub fn new(respond: F) -> Self {
        ScriptedGenerator {
            respond,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<F> Generator for ScriptedGenerator<F>
where
    F: Fn(&GenerationRequest) -> Result<String, BackendError> + Send + Sync,
{
    fn generate(&self, request: &GenerationRequest) -> Result<Generation, BackendError> {
        let id = self.calls.fetch_add(1, Ordering::SeqCst) as u64;
        let text = (self.respond)(request)?;
        Ok(Generation {
            usage: TokenUsage {
                prompt_tokens: whitespace_tokens(&request.prompt),
                completion_tokens: whitespace_tokens(&text),
            },
            text,
            attempts: 1,
            correlation_id: id,
        })
    }
}

/// Wraps a generator and counts calls per task.
pub struct CountingGenerator<G> {
    inner: G,
    counts: Mutex<HashMap<TaskKind, usize>>,
}

impl<G: Generator> CountingGenerator<G> {
    pub fn new(inner: G) -> Self {
        CountingGenerator {
            inner,
            counts: Mutex::new(HashMap::new()),
        }
    }

    pub fn count(&self, task: TaskKind) -> usize {
        self.counts.lock().unwrap().get(&task).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.counts.lock().unwrap().values().sum()
    }
}

impl<G: Generator> Generator for CountingGenerator<G> {
    fn generate(&self, request: &GenerationRequest) -> Result<Generation, BackendError> {
        *self.counts.lock().unwrap().entry(request.task).or_default() += 1;
        self.inner.generate(request)
    }
}

// ---------------------------------------------------------------------------
// HTTP backend

fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    3
}
fn default_inflight() -> usize {
    4
}
fn default_backoff() -> f64 {
    0.5
}
fn default_key_env() -> String {
    "OPENAI_API_KEY".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    /// Base URL, e.g. `https://api.openai.com/v1`. `/chat/completions` and
    /// `/embeddings` are appended.
    pub endpoint_url: String,
    pub model_name: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_seconds: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_inflight")]
    pub max_inflight: usize,
    /// First backoff delay; doubled on each retry.
    #[serde(default = "default_backoff")]
    pub backoff_base_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_prompt: Option<String>,
}

impl BackendConfig {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| BackendError::InvalidRequest(format!("{}: {e}", path.display())))?;
        let cfg: BackendConfig = serde_json::from_str(&raw).map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.timeout_seconds.is_nan() || self.timeout_seconds <= 0.0 {
            return Err(BackendError::InvalidRequest("timeout_seconds must be > 0".into()));
        }
        if self.max_inflight == 0 {
            return Err(BackendError::InvalidRequest("max_inflight must be >= 1".into()));
        }
        if self.endpoint_url.is_empty() || self.model_name.is_empty() {
            return Err(BackendError::InvalidRequest(
                "endpoint_url and model_name are required".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransportError {
    #[error("timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
}

/// Minimal POST-JSON transport, swappable for tests.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, bearer: &str, body: &Value, timeout: Duration) -> Result<HttpReply, TransportError>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| BackendError::Fatal(e.to_string()))?;
        Ok(ReqwestTransport { client })
    }
}

impl Transport for ReqwestTransport {
    fn post_json(&self, url: &str, bearer: &str, body: &Value, timeout: Duration) -> Result<HttpReply, TransportError> {
        let resp = self
            .client
            .post(url)
            .bearer_auth(bearer)
            .timeout(timeout)
            .json(body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    TransportError::Timeout
                } else {
                    TransportError::Connect(e.to_string())
                }
            })?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Connect(e.to_string())
            }
        })?;
        Ok(HttpReply { status, body })
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            permits: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock().unwrap();
        while *p == 0 {
            p = self.cv.wait(p).unwrap();
        }
        *p -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

enum Attempt {
    Done(Value),
    Retry(String),
}

type KeyLookup = Box<dyn Fn(&str) -> Option<String> + Send + Sync>;

/// OpenAI-compatible client.
pub struct HttpBackend {
    config: BackendConfig,
    transport: Arc<dyn Transport>,
    limiter: Semaphore,
    next_id: AtomicU64,
    key_lookup: KeyLookup,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        let transport = Arc::new(ReqwestTransport::new()?);
        Self::with_transport(config, transport)
    }

    pub fn with_transport(config: BackendConfig, transport: Arc<dyn Transport>) -> Result<Self, BackendError> {
        config.validate()?;
        Ok(HttpBackend {
            limiter: Semaphore::new(config.max_inflight),
            config,
            transport,
            next_id: AtomicU64::new(0),
            key_lookup: Box::new(|name| std::env::var(name).ok()),
        })
    }

    /// Overrides how the API key is looked up (defaults to the process
    /// environment).
    pub fn with_key_lookup(mut self, lookup: impl Fn(&str) -> Option<String> + Send + Sync + 'static) -> Self {
        self.key_lookup = Box::new(lookup);
        self
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn api_key(&self) -> Result<String, BackendError> {
        match (self.key_lookup)(&self.config.api_key_env) {
            Some(k) if !k.is_empty() => Ok(k),
            _ => Err(BackendError::Auth(format!(
                "environment variable {} is not set",
                self.config.api_key_env
            ))),
        }
    }

    fn url(&self, suffix: &str) -> String {
        format!("{}/{}", self.config.endpoint_url.trim_end_matches('/'), suffix)
    }

    fn once(&self, url: &str, key: &str, body: &Value) -> Result<Attempt, BackendError> {
        let timeout = Duration::from_secs_f64(self.config.timeout_seconds);
        let reply = match self.transport.post_json(url, key, body, timeout) {
            Ok(r) => r,
            Err(e) => return Ok(Attempt::Retry(e.to_string())),
        };
        match reply.status {
            200..=299 => serde_json::from_str(&reply.body)
                .map(Attempt::Done)
                .map_err(|e| BackendError::MalformedResponse(e.to_string())),
            401 | 403 => Err(BackendError::Auth(format!("HTTP {}", reply.status))),
            429 | 500..=599 => Ok(Attempt::Retry(format!("HTTP {}", reply.status))),
            other => Err(BackendError::Fatal(format!("HTTP {other}: {}", reply.body))),
        }
    }

    /// POSTs with retry; returns the parsed body and the number of attempts.
    fn post_with_retry(&self, suffix: &str, body: &Value) -> Result<(Value, u32), BackendError> {
        let key = self.api_key()?;
        let url = self.url(suffix);
        let _permit = self.limiter.acquire();
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.once(&url, &key, body)? {
                Attempt::Done(v) => return Ok((v, attempts)),
                Attempt::Retry(reason) => {
                    if attempts > self.config.max_retries {
                        return Err(BackendError::TransientExhausted { attempts, last: reason });
                    }
                    log::warn!("retrying {suffix} after {reason} (attempt {attempts})");
                    let delay = self.config.backoff_base_seconds * 2f64.powi(attempts as i32 - 1);
                    if delay > 0.0 {
                        std::thread::sleep(Duration::from_secs_f64(delay.min(60.0)));
                    }
                }
            }
        }
    }
}

impl Generator for HttpBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<Generation, BackendError> {
        request.validate()?;
        let mut messages = Vec::new();
        if let Some(sys) = &self.config.system_prompt {
            messages.push(json!({"role": "system", "content": sys}));
        }
        messages.push(json!({"role": "user", "content": request.prompt}));
        let body = json!({
            "model": self.config.model_name,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let correlation_id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let (resp, attempts) = self.post_with_retry("chat/completions", &body)?;
        let text = resp
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::MalformedResponse("missing choices[0].message.content".into()))?
            .to_string();
        let usage = TokenUsage {
            prompt_tokens: resp
                .pointer("/usage/prompt_tokens")
                .and_then(Value::as_u64)
                .unwrap_or(0),
            completion_tokens: resp
                .pointer("/usage/completion_tokens")
                .and_then(Value::as_u64)
                .unwrap_or(0),
        };
        Ok(Generation {
            text,
            usage,
            attempts,
            correlation_id,
        })
    }
}

impl Embedder for HttpBackend {
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        if text.trim().is_empty() {
            return Err(BackendError::InvalidRequest("cannot embed empty text".into()));
        }
        let model = self.config.embedding_model.as_ref().unwrap_or(&self.config.model_name);
        let body = json!({"model": model, "input": text});
        let (resp, _) = self.post_with_retry("embeddings", &body)?;
        let vec = resp
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| BackendError::MalformedResponse("missing data[0].embedding".into()))?;
        vec.iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| BackendError::MalformedResponse("non-numeric embedding".into()))
            })
            .collect()
    }
}
