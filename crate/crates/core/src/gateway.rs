//! OpenAI-compatible chat-completions client.
//!
//! [`Gateway`] is cheap to share behind an `Arc`. It caps the number of
//! outstanding requests per endpoint, retries 429/5xx/timeouts with
//! exponential backoff and full jitter, and can append every attempt to a
//! JSONL transcript for later replay.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tracing::{debug, warn};

use crate::ingest::count_ref_tokens;
use crate::prompting::{ChatMessage, ChatRequest};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("request failed after {attempts} attempt(s) (last status: {}): {message}", last_status.map_or("none".to_string(), |s| s.to_string()))]
    RequestFailed {
        last_status: Option<u16>,
        attempts: u32,
        message: String,
    },
    #[error("invalid request (HTTP {status}): {body}")]
    InvalidRequest { status: u16, body: String },
    #[error("authentication rejected (HTTP {status})")]
    AuthError { status: u16 },
    #[error("environment variable {0} holding the API key is not set")]
    MissingApiKey(String),
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("invalid endpoint configuration: {0}")]
    InvalidEndpoint(String),
    #[error("invalid decoding parameters: {0}")]
    InvalidDecoding(String),
    #[error("transcript capture: {0}")]
    Capture(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            top_p: 0.95,
            max_new_tokens: 1024,
            seed: None,
        }
    }
}

impl DecodingParams {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidDecoding(format!("temperature {} < 0", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GatewayError::InvalidDecoding(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        if self.max_new_tokens < 1 {
            return Err(GatewayError::InvalidDecoding("max_new_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_backoff_ms: 500,
        }
    }
}

impl RetryPolicy {
    /// Upper bound of the jittered delay before retry number `attempt` (1-based
    /// index of the attempt that just failed): `base · 2^(attempt−1)`.
    pub fn backoff_ceiling_ms(&self, attempt: u32) -> u64 {
        let shift = attempt.saturating_sub(1).min(63);
        self.base_backoff_ms.saturating_mul(1u64 << shift)
    }

    /// Full jitter: uniform in `[0, ceiling]`.
    pub fn jittered_delay(&self, attempt: u32, rng: &mut impl Rng) -> Duration {
        let ceiling = self.backoff_ceiling_ms(attempt);
        Duration::from_millis(rng.random_range(0..=ceiling))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEndpoint {
    pub model_id: String,
    pub base_url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: f64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_max_in_flight() -> usize {
    8
}

fn default_timeout_s() -> f64 {
    120.0
}

impl ModelEndpoint {
    pub fn new(model_id: impl Into<String>, base_url: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            base_url: base_url.into(),
            api_key_env: None,
            max_in_flight: default_max_in_flight(),
            timeout_s: default_timeout_s(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::InvalidEndpoint(format!("{}: {m}", self.model_id)));
        if self.model_id.is_empty() {
            return bad("model_id is empty");
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return bad("base_url must start with http:// or https://");
        }
        if self.max_in_flight < 1 {
            return bad("max_in_flight must be >= 1");
        }
        if self.retry.max_attempts < 1 {
            return bad("retry.max_attempts must be >= 1");
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return bad("timeout_s must be positive");
        }
        Ok(())
    }

    fn url(&self, route: &str) -> String {
        format!("{}/{route}", self.base_url.trim_end_matches('/'))
    }

    fn api_key(&self) -> Result<Option<String>, GatewayError> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| GatewayError::MissingApiKey(var.clone())),
        }
    }

    fn limit_key(&self) -> String {
        format!("{}@{}", self.model_id, self.base_url)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    ContentFilter,
    Error,
}

impl FinishReason {
    fn from_wire(s: Option<&str>) -> Self {
        match s {
            None | Some("stop") => Self::Stop,
            Some("length") => Self::Length,
            Some("content_filter") => Self::ContentFilter,
            Some(_) => Self::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub chunk_id: String,
    pub output_text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Usage counts were computed locally with the reference tokenizer.
    pub usage_estimated: bool,
    pub model_id: String,
    pub finish_reason: FinishReason,
    pub latency_ms: u64,
    pub attempt_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub reachable: bool,
    pub model_listed: bool,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct WireResponse {
    #[serde(default)]
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

#[derive(Deserialize)]
struct WireModels {
    #[serde(default)]
    data: Vec<WireModel>,
}

#[derive(Deserialize)]
struct WireModel {
    id: String,
}

/// The exact bytes POSTed to `/chat/completions` for `request` on `model_id`.
pub fn wire_body(request: &ChatRequest, model_id: &str) -> Vec<u8> {
    let d = &request.decoding;
    serde_json::to_vec(&WireRequest {
        model: model_id,
        messages: &request.messages,
        temperature: d.temperature,
        top_p: d.top_p,
        max_tokens: d.max_new_tokens,
        seed: d.seed,
    })
    .expect("request serializes")
}

/// One line of a capture transcript: a single HTTP attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub chunk_id: String,
    pub model_id: String,
    pub attempt: u32,
    pub request: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Read a capture transcript back.
pub fn read_transcript(path: &Path) -> std::io::Result<Vec<TranscriptEntry>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(std::io::Error::other))
        .collect()
}

enum Attempt {
    Done(Completion),
    Retry { status: Option<u16>, message: String },
    Fatal(GatewayError),
}

pub struct Gateway {
    client: reqwest::Client,
    limits: Mutex<HashMap<String, Arc<Semaphore>>>,
    capture: Option<Mutex<BufWriter<File>>>,
}

impl Default for Gateway {
    fn default() -> Self {
        Self::new()
    }
}

impl Gateway {
    pub fn new() -> Self {
        Self {
            client: reqwest::Client::new(),
            limits: Mutex::new(HashMap::new()),
            capture: None,
        }
    }

    /// Append every request/response attempt to the JSONL file at `path`.
    pub fn with_capture(mut self, path: &Path) -> Result<Self, GatewayError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        self.capture = Some(Mutex::new(BufWriter::new(file)));
        Ok(self)
    }

    fn limiter(&self, endpoint: &ModelEndpoint) -> Arc<Semaphore> {
        let mut limits = self.limits.lock().expect("limiter lock");
        limits
            .entry(endpoint.limit_key())
            .or_insert_with(|| Arc::new(Semaphore::new(endpoint.max_in_flight)))
            .clone()
    }

    fn record(&self, entry: &TranscriptEntry) -> Result<(), GatewayError> {
        if let Some(capture) = &self.capture {
            let mut w = capture.lock().expect("capture lock");
            serde_json::to_writer(&mut *w, entry).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        Ok(())
    }

    pub async fn complete(&self, request: &ChatRequest, endpoint: &ModelEndpoint) -> Result<Completion, GatewayError> {
        endpoint.validate()?;
        let api_key = endpoint.api_key()?;
        let body = wire_body(request, &endpoint.model_id);
        let limiter = self.limiter(endpoint);
        let started = Instant::now();

        let mut last_status = None;
        let mut last_message = String::new();
        for attempt in 1..=endpoint.retry.max_attempts {
            let outcome = {
                let _permit = limiter.acquire().await.expect("semaphore never closed");
                self.attempt(request, endpoint, api_key.as_deref(), &body, attempt, started)
                    .await?
            };
            match outcome {
                Attempt::Done(c) => return Ok(c),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry { status, message } => {
                    debug!(chunk_id = %request.chunk_id, attempt, ?status, %message, "retryable failure");
                    last_status = status;
                    last_message = message;
                    if attempt < endpoint.retry.max_attempts {
                        let delay = endpoint.retry.jittered_delay(attempt, &mut rand::rng());
                        tokio::time::sleep(delay).await;
                    }
                }
            }
        }
        warn!(chunk_id = %request.chunk_id, model = %endpoint.model_id, "retries exhausted");
        Err(GatewayError::RequestFailed {
            last_status,
            attempts: endpoint.retry.max_attempts,
            message: last_message,
        })
    }

    async fn attempt(
        &self,
        request: &ChatRequest,
        endpoint: &ModelEndpoint,
        api_key: Option<&str>,
        body: &[u8],
        attempt: u32,
        started: Instant,
    ) -> Result<Attempt, GatewayError> {
        let mut entry = TranscriptEntry {
            chunk_id: request.chunk_id.clone(),
            model_id: endpoint.model_id.clone(),
            attempt,
            request: serde_json::from_slice(body).expect("own body parses"),
            status: None,
            response: None,
            error: None,
        };

        let mut builder = self
            .client
            .post(endpoint.url("chat/completions"))
            .timeout(Duration::from_secs_f64(endpoint.timeout_s))
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_vec());
        if let Some(key) = api_key {
            builder = builder.bearer_auth(key);
        }

        let sent = async {
            let resp = builder.send().await?;
            let status = resp.status().as_u16();
            let text = resp.text().await?;
            Ok::<_, reqwest::Error>((status, text))
        }
        .await;

        let (status, text) = match sent {
            Ok(pair) => pair,
            Err(e) => {
                entry.error = Some(e.to_string());
                self.record(&entry)?;
                return Ok(Attempt::Retry {
                    status: None,
                    message: e.to_string(),
                });
            }
        };
        entry.status = Some(status);
        entry.response = Some(text.clone());
        self.record(&entry)?;

        Ok(match status {
            200..=299 => match parse_completion(request, endpoint, &text, attempt, started) {
                Ok(c) => Attempt::Done(c),
                Err(e) => Attempt::Fatal(e),
            },
            429 | 500..=599 => Attempt::Retry {
                status: Some(status),
                message: truncate(&text, 200),
            },
            401 | 403 => Attempt::Fatal(GatewayError::AuthError { status }),
            _ => Attempt::Fatal(GatewayError::InvalidRequest {
                status,
                body: truncate(&text, 500),
            }),
        })
    }

    /// Probe `GET {base_url}/models`. Never fails; problems show up as `false`.
    pub async fn healthcheck(&self, endpoint: &ModelEndpoint) -> Health {
        let mut builder = self
            .client
            .get(endpoint.url("models"))
            .timeout(Duration::from_secs_f64(endpoint.timeout_s.min(10.0)));
        if let Ok(Some(key)) = endpoint.api_key() {
            builder = builder.bearer_auth(key);
        }
        let Ok(resp) = builder.send().await else {
            return Health {
                reachable: false,
                model_listed: false,
            };
        };
        let ok = resp.status().is_success();
        let listed = ok
            && resp
                .json::<WireModels>()
                .await
                .is_ok_and(|m| m.data.iter().any(|d| d.id == endpoint.model_id));
        Health {
            reachable: true,
            model_listed: listed,
        }
    }
}

fn truncate(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => format!("{}…", &s[..i]),
        None => s.to_string(),
    }
}

fn parse_completion(
    request: &ChatRequest,
    endpoint: &ModelEndpoint,
    text: &str,
    attempt: u32,
    started: Instant,
) -> Result<Completion, GatewayError> {
    let parsed: WireResponse =
        serde_json::from_str(text).map_err(|e| GatewayError::Protocol(e.to_string()))?;
    let choice = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| GatewayError::Protocol("response has no choices".into()))?;
    let output_text = choice.message.content.unwrap_or_default();
    let (prompt_tokens, completion_tokens, usage_estimated) = match parsed.usage {
        Some(u) => (u.prompt_tokens, u.completion_tokens, false),
        None => {
            let prompt: usize = request.messages.iter().map(|m| count_ref_tokens(&m.content)).sum();
            (prompt as u64, count_ref_tokens(&output_text) as u64, true)
        }
    };
    Ok(Completion {
        chunk_id: request.chunk_id.clone(),
        output_text,
        prompt_tokens,
        completion_tokens,
        usage_estimated,
        model_id: endpoint.model_id.clone(),
        finish_reason: FinishReason::from_wire(choice.finish_reason.as_deref()),
        latency_ms: started.elapsed().as_millis() as u64,
        attempt_count: attempt,
    })
}
