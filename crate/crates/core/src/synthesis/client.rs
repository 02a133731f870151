//! One chat-style wire contract covering the generator, judge, and
//! translator roles: POST {model, messages[], params} -> {text}.
//!
//! Real providers sit behind [`ChatClient`]; deterministic stubs ship here
//! so the pipeline tests never touch the network. The client layer never
//! blocks a batch: failures degrade to recorded statuses and totals always
//! reconcile.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};
use thiserror::Error;
use xxhash_rust::xxh3::xxh3_64;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("http {status}: {body}")]
    Http { status: u16, body: String },
    #[error("bad response: {0}")]
    BadResponse(String),
    #[error("missing auth token env var {0}")]
    MissingAuth(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

/// Generation parameters; preference building requires configs that differ
/// in at least one field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            top_p: 0.95,
            max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub params: GenParams,
}

impl ChatRequest {
    /// Content of the last user message, which is what echo-style stubs
    /// reflect back.
    pub fn last_user_content(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
}

pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ClientError>;
}

/// Client endpoint configuration file contents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_token_env: Option<String>,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    /// Requests per second; zero disables throttling.
    #[serde(default)]
    pub rate_per_sec: f64,
}

fn default_concurrency() -> usize {
    4
}

/// HTTP implementation of the wire contract.
pub struct HttpChatClient {
    config: ClientConfig,
    agent: ureq::Agent,
    last_request_ms: Mutex<u64>,
}

impl HttpChatClient {
    pub fn new(config: ClientConfig) -> Self {
        Self {
            config,
            agent: ureq::Agent::new_with_defaults(),
            last_request_ms: Mutex::new(0),
        }
    }

    fn throttle(&self) {
        if self.config.rate_per_sec <= 0.0 {
            return;
        }
        let min_gap_ms = (1000.0 / self.config.rate_per_sec) as u64;
        let mut last = self.last_request_ms.lock().unwrap();
        let now = now_ms();
        if now < *last + min_gap_ms {
            std::thread::sleep(std::time::Duration::from_millis(*last + min_gap_ms - now));
        }
        *last = now_ms();
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ClientError> {
        self.throttle();
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(env_name) = &self.config.auth_token_env {
            let token = std::env::var(env_name)
                .map_err(|_| ClientError::MissingAuth(env_name.clone()))?;
            req = req.header("authorization", &format!("Bearer {token}"));
        }
        let mut response = req
            .send_json(request)
            .map_err(|e| map_ureq_error(&e))?;
        response
            .body_mut()
            .read_json::<ChatResponse>()
            .map_err(|e| ClientError::BadResponse(e.to_string()))
    }
}

fn map_ureq_error(e: &ureq::Error) -> ClientError {
    match e {
        ureq::Error::StatusCode(code) => ClientError::Http {
            status: *code,
            body: String::new(),
        },
        other => ClientError::Transport(other.to_string()),
    }
}

/// Deterministic stub: answers with the last user message.
pub struct EchoClient;

impl ChatClient for EchoClient {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ClientError> {
        Ok(ChatResponse {
            text: request.last_user_content().to_string(),
        })
    }
}

/// Stub that fails the first `fail_first` calls with HTTP 500, then echoes.
/// `fail_first = u64::MAX` never recovers.
pub struct FlakyClient {
    fail_first: u64,
    calls: AtomicU64,
}

impl FlakyClient {
    pub fn failing(times: u64) -> Self {
        Self {
            fail_first: times,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatClient for FlakyClient {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ClientError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if n < self.fail_first {
            return Err(ClientError::Http {
                status: 500,
                body: "stubbed failure".into(),
            });
        }
        EchoClient.complete(request)
    }
}

/// Stub with scripted answers keyed by the last user message; unknown
/// prompts echo. Also varies output by `params.temperature` so distinct
/// generation configs produce distinct responses.
pub struct ScriptedClient {
    pub responses: HashMap<String, String>,
    pub vary_by_temperature: bool,
}

impl ScriptedClient {
    pub fn new(responses: HashMap<String, String>) -> Self {
        Self {
            responses,
            vary_by_temperature: false,
        }
    }
}

impl ChatClient for ScriptedClient {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ClientError> {
        let key = request.last_user_content();
        let mut text = self
            .responses
            .get(key)
            .cloned()
            .unwrap_or_else(|| key.to_string());
        if self.vary_by_temperature {
            text = format!("{text} [t={}]", request.params.temperature);
        }
        Ok(ChatResponse { text })
    }
}

/// Wrapper counting wire calls, for budget assertions in tests.
pub struct CountingClient<C> {
    pub inner: C,
    calls: AtomicU64,
}

impl<C> CountingClient<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<C: ChatClient> ChatClient for CountingClient<C> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 200,
        }
    }
}

impl RetryPolicy {
    /// No delays; for tests.
    pub fn immediate() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 0,
        }
    }

    /// Run a request with exponential backoff. Returns the response and the
    /// number of attempts actually made.
    pub fn run(
        &self,
        client: &dyn ChatClient,
        request: &ChatRequest,
    ) -> (Result<ChatResponse, ClientError>, u32) {
        let mut attempt = 0;
        loop {
            attempt += 1;
            match client.complete(request) {
                Ok(r) => return (Ok(r), attempt),
                Err(e) if attempt >= self.max_attempts => return (Err(e), attempt),
                Err(_) => {
                    if self.base_delay_ms > 0 {
                        let delay = self.base_delay_ms << (attempt - 1);
                        std::thread::sleep(std::time::Duration::from_millis(delay));
                    }
                }
            }
        }
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditEntry {
    pub ts: u64,
    pub role: String,
    pub prompt_hash: String,
    pub status: String,
    pub latency_ms: u64,
}

/// JSON-Lines audit log of all client traffic.
pub struct AuditLog {
    sink: Mutex<Box<dyn Write + Send>>,
    entries: AtomicU64,
}

impl AuditLog {
    pub fn to_file(path: &std::path::Path) -> std::io::Result<Self> {
        Ok(Self {
            sink: Mutex::new(Box::new(std::io::BufWriter::new(std::fs::File::create(
                path,
            )?))),
            entries: AtomicU64::new(0),
        })
    }

    pub fn sink_to(writer: Box<dyn Write + Send>) -> Self {
        Self {
            sink: Mutex::new(writer),
            entries: AtomicU64::new(0),
        }
    }

    pub fn discard() -> Self {
        Self::sink_to(Box::new(std::io::sink()))
    }

    pub fn record(&self, role: &str, prompt: &str, status: &str, latency_ms: u64) {
        let entry = AuditEntry {
            ts: now_ms(),
            role: role.to_string(),
            prompt_hash: format!("{:016x}", xxh3_64(prompt.as_bytes())),
            status: status.to_string(),
            latency_ms,
        };
        let mut sink = self.sink.lock().unwrap();
        if let Ok(line) = serde_json::to_string(&entry) {
            let _ = writeln!(sink, "{line}");
        }
        let _ = sink.flush();
        self.entries.fetch_add(1, Ordering::SeqCst);
    }

    pub fn entry_count(&self) -> u64 {
        self.entries.load(Ordering::SeqCst)
    }
}
