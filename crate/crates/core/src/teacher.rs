//! Clients for the black-box text generator.
//!
//! [`ChatCompletionsClient`] speaks the common chat-completions JSON protocol
//! over HTTP. [`ScriptedStub`] answers from a fixture for offline runs.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

/// Environment variable holding the bearer token for the endpoint.
pub const API_KEY_ENV: &str = "CODI_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TeacherError {
    #[error("request timed out")]
    Timeout,
    #[error("server returned HTTP {0}")]
    ServerError(u16),
    #[error("rate limited after exhausting retries")]
    RateLimited,
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("scripted responses exhausted")]
    ScriptExhausted,
    #[error("endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("invalid teacher config: {0}")]
    InvalidConfig(String),
}

impl TeacherError {
    /// Stable reason name used in manifests and reports.
    pub fn reason(&self) -> &'static str {
        match self {
            TeacherError::Timeout => "Timeout",
            TeacherError::ServerError(_) => "ServerError",
            TeacherError::RateLimited => "RateLimited",
            TeacherError::MalformedResponse(_) => "MalformedResponse",
            TeacherError::ScriptExhausted => "ScriptExhausted",
            TeacherError::Unreachable(_) => "Unreachable",
            TeacherError::InvalidConfig(_) => "InvalidConfig",
        }
    }

    /// Errors that describe the environment rather than one bad completion.
    pub fn is_fatal(&self) -> bool {
        matches!(self, TeacherError::Unreachable(_) | TeacherError::InvalidConfig(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_backoff_ms: u64,
    pub factor: f64,
    /// Each wait is scaled by a uniform factor in `[1 - jitter, 1 + jitter]`.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_backoff_ms: 1000,
            factor: 2.0,
            jitter: 0.1,
        }
    }
}

impl RetryPolicy {
    /// Wait before retry number `retry` (0-based). `u` in `[0, 1)` drives the jitter.
    pub fn delay(&self, retry: u32, u: f64) -> Duration {
        let base = self.base_backoff_ms as f64 / 1000.0 * self.factor.powi(retry as i32);
        let scale = 1.0 + self.jitter * (2.0 * u - 1.0);
        Duration::from_secs_f64((base * scale).max(0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub timeout_secs: f64,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            model: "teacher".into(),
            temperature: 0.7,
            max_output_tokens: 1024,
            timeout_secs: 120.0,
            retry: RetryPolicy::default(),
            max_in_flight: 8,
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<(), TeacherError> {
        let bad = |m: &str| Err(TeacherError::InvalidConfig(m.to_owned()));
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad("temperature must be ≥ 0");
        }
        if self.max_output_tokens == 0 {
            return bad("max_output_tokens must be positive");
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return bad("timeout_secs must be positive");
        }
        if !(self.retry.factor.is_finite() && self.retry.factor >= 1.0) {
            return bad("retry factor must be ≥ 1");
        }
        if !(0.0..=1.0).contains(&self.retry.jitter) {
            return bad("retry jitter must be within [0, 1]");
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be ≥ 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnResponse {
    /// The first completion choice, unmodified.
    pub text: String,
    pub usage: Usage,
    pub latency: Duration,
}

/// One generation call. The key fields identify the call for scripted
/// models; network clients only send `prompt`.
#[derive(Debug, Clone, Copy)]
pub struct GenerationRequest<'a> {
    pub prompt: &'a str,
    /// Link id during synthesis, dialog id during evaluation.
    pub link_id: &'a str,
    /// 0-based step within the conversation (synthesis) or 1-based turn (evaluation).
    pub turn_index: usize,
    pub conversation_index: u64,
}

impl<'a> GenerationRequest<'a> {
    pub fn new(prompt: &'a str) -> Self {
        Self {
            prompt,
            link_id: "",
            turn_index: 0,
            conversation_index: 0,
        }
    }
}

pub trait CompletionModel: Send + Sync {
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<TurnResponse, TeacherError>;

    fn model_id(&self) -> &str;
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, duration: Duration);
}

pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// Counting semaphore bounding concurrent requests.
struct Admission {
    limit: usize,
    in_use: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Admission);

impl Admission {
    fn new(limit: usize) -> Self {
        Self {
            limit,
            in_use: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_use.lock().unwrap();
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_use.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

enum Attempt {
    Done(TurnResponse),
    Retry(TeacherError),
    Fail(TeacherError),
}

pub struct ChatCompletionsClient {
    config: TeacherConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    admission: Admission,
    sleeper: Box<dyn Sleeper>,
}

impl ChatCompletionsClient {
    /// Reads the API key from [`API_KEY_ENV`] if set.
    pub fn new(config: TeacherConfig) -> Result<Self, TeacherError> {
        Self::with_sleeper(config, Box::new(ThreadSleeper))
    }

    pub fn with_sleeper(config: TeacherConfig, sleeper: Box<dyn Sleeper>) -> Result<Self, TeacherError> {
        config.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            admission: Admission::new(config.max_in_flight),
            config,
            agent,
            sleeper,
        })
    }

    pub fn config(&self) -> &TeacherConfig {
        &self.config
    }

    pub fn request_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_output_tokens,
        })
    }

    fn attempt(&self, body: &str) -> Attempt {
        let _permit = self.admission.acquire();
        let started = Instant::now();
        let mut req = self
            .agent
            .post(&self.config.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send(body) {
            Ok(resp) => resp,
            Err(ureq::Error::Io(io)) if !host_resolves(&self.config.endpoint) => {
                return Attempt::Fail(TeacherError::Unreachable(io.to_string()))
            }
            Err(e) => return classify_transport(e),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return classify_transport(e),
        };
        match status {
            200..=299 => match parse_completion(&text) {
                Ok((text, usage)) => Attempt::Done(TurnResponse {
                    text,
                    usage,
                    latency: started.elapsed(),
                }),
                Err(e) => Attempt::Fail(e),
            },
            429 => Attempt::Retry(TeacherError::RateLimited),
            500..=599 => Attempt::Retry(TeacherError::ServerError(status)),
            _ => Attempt::Fail(TeacherError::ServerError(status)),
        }
    }
}

/// Whether the endpoint's host name resolves to at least one address.
fn host_resolves(endpoint: &str) -> bool {
    use std::net::ToSocketAddrs;
    let Ok(uri) = endpoint.parse::<ureq::http::Uri>() else {
        return false;
    };
    let Some(host) = uri.host() else {
        return false;
    };
    let port = uri
        .port_u16()
        .unwrap_or(if uri.scheme_str() == Some("https") { 443 } else { 80 });
    (host.trim_start_matches('[').trim_end_matches(']'), port)
        .to_socket_addrs()
        .is_ok_and(|mut a| a.next().is_some())
}

fn classify_transport(e: ureq::Error) -> Attempt {
    match e {
        ureq::Error::Timeout(_) => Attempt::Retry(TeacherError::Timeout),
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => {
            Attempt::Retry(TeacherError::Timeout)
        }
        ureq::Error::Io(io)
            if matches!(
                io.kind(),
                std::io::ErrorKind::ConnectionRefused | std::io::ErrorKind::AddrNotAvailable
            ) =>
        {
            Attempt::Fail(TeacherError::Unreachable(io.to_string()))
        }
        ureq::Error::Io(io) => Attempt::Retry(TeacherError::MalformedResponse(io.to_string())),
        ureq::Error::HostNotFound | ureq::Error::ConnectionFailed | ureq::Error::BadUri(_) => {
            Attempt::Fail(TeacherError::Unreachable(e.to_string()))
        }
        other => Attempt::Fail(TeacherError::MalformedResponse(other.to_string())),
    }
}

/// Extracts `choices[0].message.content` and optional usage counters.
pub fn parse_completion(body: &str) -> Result<(String, Usage), TeacherError> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| TeacherError::MalformedResponse(format!("invalid JSON: {e}")))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| TeacherError::MalformedResponse("missing choices[0].message.content".into()))?;
    let count = |k: &str| v.pointer(&format!("/usage/{k}")).and_then(Value::as_u64).unwrap_or(0);
    Ok((
        content.to_owned(),
        Usage {
            prompt_tokens: count("prompt_tokens"),
            completion_tokens: count("completion_tokens"),
        },
    ))
}

impl CompletionModel for ChatCompletionsClient {
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<TurnResponse, TeacherError> {
        if request.prompt.is_empty() {
            return Err(TeacherError::InvalidConfig("prompt is empty".into()));
        }
        let body = self.request_body(request.prompt).to_string();
        let mut retry = 0;
        loop {
            match self.attempt(&body) {
                Attempt::Done(resp) => return Ok(resp),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) if retry >= self.config.retry.max_retries => return Err(e),
                Attempt::Retry(_) => {
                    let u: f64 = rand::random();
                    self.sleeper.sleep(self.config.retry.delay(retry, u));
                    retry += 1;
                }
            }
        }
    }

    fn model_id(&self) -> &str {
        &self.config.model
    }
}

/// One scripted answer keyed by `(link_id, turn_index)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub link_id: String,
    pub turn_index: usize,
    pub text: String,
}

/// Stub fixture file: keyed answers plus an ordered fallback queue.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubFixture {
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub script: Vec<ScriptEntry>,
    #[serde(default)]
    pub fallback: Vec<String>,
}

/// Deterministic stand-in for a teacher.
///
/// Keyed answers are stateless. The fallback queue is consumed in call
/// order, so it is only reproducible under sequential use.
pub struct ScriptedStub {
    model: String,
    script: BTreeMap<(String, usize), String>,
    fallback: Mutex<VecDeque<String>>,
}

impl ScriptedStub {
    pub fn new(script: BTreeMap<(String, usize), String>, fallback: Vec<String>) -> Self {
        Self {
            model: "scripted-stub".into(),
            script,
            fallback: Mutex::new(fallback.into()),
        }
    }

    pub fn from_fixture(fixture: StubFixture) -> Self {
        let script = fixture
            .script
            .into_iter()
            .map(|e| ((e.link_id, e.turn_index), e.text))
            .collect();
        let mut stub = Self::new(script, fixture.fallback);
        if let Some(model) = fixture.model {
            stub.model = model;
        }
        stub
    }
}

impl CompletionModel for ScriptedStub {
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<TurnResponse, TeacherError> {
        let key = (request.link_id.to_owned(), request.turn_index);
        let text = match self.script.get(&key) {
            Some(text) => text.clone(),
            None => self
                .fallback
                .lock()
                .unwrap()
                .pop_front()
                .ok_or(TeacherError::ScriptExhausted)?,
        };
        Ok(TurnResponse {
            usage: Usage {
                prompt_tokens: request.prompt.split_whitespace().count() as u64,
                completion_tokens: text.split_whitespace().count() as u64,
            },
            text,
            latency: Duration::ZERO,
        })
    }

    fn model_id(&self) -> &str {
        &self.model
    }
}
