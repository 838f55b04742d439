//! A local OpenAI-compatible server for tests.
//!
//! The server runs on its own thread with its own runtime, so it can be used
//! from plain `#[test]` functions as well as from async tests. Dropping the
//! handle stops it.

use std::collections::{HashMap, VecDeque};
use std::net::{SocketAddr, TcpListener as StdListener};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::gen::{fnv1a, synonym_paraphrase};

/// How a successful request is answered.
#[derive(Debug, Clone)]
pub enum Responder {
    /// Synonym-substitute the chunk (text after the first blank line of the
    /// last user message), optionally behind a boilerplate line.
    Paraphrase { prefix: Option<String> },
    /// Always the same content.
    Fixed(String),
    /// Raw response bodies keyed by request JSON; unknown requests get 404.
    Replay(Vec<(Value, String)>),
}

/// Probability of each injected failure status, drawn per attempt.
#[derive(Debug, Clone, Copy, Default)]
pub struct Faults {
    pub rate_429: f64,
    pub rate_500: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct MockConfig {
    pub models: Vec<String>,
    pub responder: Responder,
    pub faults: Faults,
    /// Statuses returned, in order, to the first requests before anything else.
    pub script: Vec<u16>,
    pub latency: Duration,
    pub omit_usage: bool,
    pub finish_reason: String,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            models: vec!["mock-model".into()],
            responder: Responder::Paraphrase { prefix: None },
            faults: Faults::default(),
            script: Vec::new(),
            latency: Duration::ZERO,
            omit_usage: false,
            finish_reason: "stop".into(),
        }
    }
}

impl MockConfig {
    pub fn models<S: Into<String>>(mut self, models: impl IntoIterator<Item = S>) -> Self {
        self.models = models.into_iter().map(Into::into).collect();
        self
    }

    pub fn responder(mut self, r: Responder) -> Self {
        self.responder = r;
        self
    }

    pub fn faults(mut self, rate_429: f64, rate_500: f64, seed: u64) -> Self {
        self.faults = Faults { rate_429, rate_500, seed };
        self
    }

    pub fn script(mut self, statuses: impl IntoIterator<Item = u16>) -> Self {
        self.script = statuses.into_iter().collect();
        self
    }

    pub fn latency(mut self, d: Duration) -> Self {
        self.latency = d;
        self
    }

    pub fn omit_usage(mut self) -> Self {
        self.omit_usage = true;
        self
    }

    pub fn finish_reason(mut self, r: impl Into<String>) -> Self {
        self.finish_reason = r.into();
        self
    }
}

struct Shared {
    cfg: MockConfig,
    script: Mutex<VecDeque<u16>>,
    seen: Mutex<HashMap<u64, u64>>,
    bodies: Mutex<Vec<Vec<u8>>>,
    statuses: Mutex<Vec<u16>>,
    exchanges: Mutex<Vec<(Vec<u8>, u16)>>,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

struct InFlight<'a>(&'a Shared);

impl<'a> InFlight<'a> {
    fn enter(s: &'a Shared) -> Self {
        let now = s.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        s.max_in_flight.fetch_max(now, Ordering::SeqCst);
        Self(s)
    }
}

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

pub struct MockServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(cfg: MockConfig) -> Self {
        let shared = Arc::new(Shared {
            script: Mutex::new(cfg.script.iter().copied().collect()),
            cfg,
            seen: Mutex::new(HashMap::new()),
            bodies: Mutex::new(Vec::new()),
            statuses: Mutex::new(Vec::new()),
            exchanges: Mutex::new(Vec::new()),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
        });
        let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
        let (addr_tx, addr_rx) = mpsc::channel();
        let state = shared.clone();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .expect("mock runtime");
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.expect("bind mock port");
                addr_tx.send(listener.local_addr().expect("local addr")).expect("report address");
                let app = Router::new()
                    .route("/chat/completions", post(chat))
                    .route("/models", get(models))
                    .with_state(state);
                tokio::select! {
                    r = axum::serve(listener, app) => r.expect("mock server"),
                    _ = stop_rx => {}
                }
            });
        });
        let addr = addr_rx.recv().expect("mock server started");
        Self {
            addr,
            shared,
            stop: Some(stop_tx),
            thread: Some(thread),
        }
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Bodies of every `/chat/completions` request, in arrival order.
    pub fn requests(&self) -> Vec<Vec<u8>> {
        self.shared.bodies.lock().unwrap().clone()
    }

    /// Status of every `/chat/completions` response, in completion order.
    pub fn statuses(&self) -> Vec<u16> {
        self.shared.statuses.lock().unwrap().clone()
    }

    /// Each request body with the status it was answered with, in completion order.
    pub fn exchanges(&self) -> Vec<(Vec<u8>, u16)> {
        self.shared.exchanges.lock().unwrap().clone()
    }

    pub fn request_count(&self) -> usize {
        self.shared.bodies.lock().unwrap().len()
    }

    /// Highest number of chat requests ever being handled at once.
    pub fn max_in_flight(&self) -> usize {
        self.shared.max_in_flight.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// A base URL nothing listens on.
pub fn dead_base_url() -> String {
    let l = StdListener::bind("127.0.0.1:0").expect("bind");
    let addr = l.local_addr().expect("addr");
    drop(l);
    format!("http://{addr}")
}

fn error(status: u16, message: &str) -> Response {
    let code = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (code, axum::Json(json!({"error": {"message": message, "code": status}}))).into_response()
}

async fn models(State(s): State<Arc<Shared>>) -> Response {
    let data: Vec<Value> = s.cfg.models.iter().map(|m| json!({"id": m, "object": "model"})).collect();
    axum::Json(json!({"object": "list", "data": data})).into_response()
}

async fn chat(State(s): State<Arc<Shared>>, body: Bytes) -> Response {
    let _guard = InFlight::enter(&s);
    let occurrence = {
        s.bodies.lock().unwrap().push(body.to_vec());
        let mut seen = s.seen.lock().unwrap();
        let n = seen.entry(fnv1a(&body)).or_default();
        *n += 1;
        *n
    };
    if !s.cfg.latency.is_zero() {
        tokio::time::sleep(s.cfg.latency).await;
    }
    let resp = answer(&s, &body, occurrence);
    let status = resp.status().as_u16();
    s.statuses.lock().unwrap().push(status);
    s.exchanges.lock().unwrap().push((body.to_vec(), status));
    resp
}

fn answer(s: &Shared, body: &[u8], occurrence: u64) -> Response {
    if let Some(status) = s.script.lock().unwrap().pop_front() {
        return error(status, "scripted failure");
    }
    let f = s.cfg.faults;
    if f.rate_429 > 0.0 || f.rate_500 > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(f.seed ^ fnv1a(body) ^ occurrence.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let u: f64 = rng.random();
        if u < f.rate_429 {
            return error(429, "rate limited");
        }
        if u < f.rate_429 + f.rate_500 {
            return error(500, "internal error");
        }
    }
    let Ok(req) = serde_json::from_slice::<Value>(body) else {
        return error(400, "body is not JSON");
    };
    let model = req["model"].as_str().unwrap_or_default().to_string();
    if !s.cfg.models.contains(&model) {
        return error(404, "model not found");
    }
    let Some(messages) = req["messages"].as_array() else {
        return error(400, "messages missing");
    };
    let content = match &s.cfg.responder {
        Responder::Replay(map) => {
            return match map.iter().find(|(k, _)| *k == req) {
                Some((_, text)) => (StatusCode::OK, [("content-type", "application/json")], text.clone()).into_response(),
                None => error(404, "no recorded response"),
            };
        }
        Responder::Fixed(text) => text.clone(),
        Responder::Paraphrase { prefix } => {
            let user = messages
                .iter()
                .rev()
                .find(|m| m["role"] == "user")
                .and_then(|m| m["content"].as_str())
                .unwrap_or_default();
            let chunk = user.split_once("\n\n").map_or(user, |(_, c)| c);
            let body = synonym_paraphrase(chunk);
            match prefix {
                Some(p) => format!("{p}\n{body}"),
                None => body,
            }
        }
    };
    let prompt_words: usize = messages
        .iter()
        .filter_map(|m| m["content"].as_str())
        .map(|c| c.split_whitespace().count())
        .sum();
    let completion_words = content.split_whitespace().count();
    let mut out = json!({
        "id": format!("chatcmpl-mock-{occurrence}"),
        "object": "chat.completion",
        "model": model,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": s.cfg.finish_reason,
        }],
    });
    if !s.cfg.omit_usage {
        out["usage"] = json!({
            "prompt_tokens": prompt_words,
            "completion_tokens": completion_words,
            "total_tokens": prompt_words + completion_words,
        });
    }
    axum::Json(out).into_response()
}
