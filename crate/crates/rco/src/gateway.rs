//! Uniform access to actor/critic/judge model endpoints.
//!
//! Two backends exist: a chat-completion wire client for real runs and a
//! deterministic mock whose reply is a pure function of
//! (seed, request, behavior). [`complete`] retries transient failures with
//! exponential backoff; [`batch_complete`] fans requests out over a bounded
//! worker pool and returns results aligned index-for-index with the input.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::time::{Duration, Instant};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{MockBehaviorKind, Role};
use crate::templates::RenderedPrompt;

/// Speaker of one chat message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    System,
    User,
}

impl Speaker {
    fn wire_role(self) -> &'static str {
        match self {
            Speaker::System => "system",
            Speaker::User => "user",
        }
    }
}

/// One chat message.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Message {
    pub speaker: Speaker,
    pub text: String,
}

/// A completion request for one of the three model roles.
#[derive(Debug, Clone, Serialize)]
pub struct CompletionRequest {
    pub role_tag: Role,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl CompletionRequest {
    /// Build a request from a rendered prompt (system turn first if present).
    pub fn from_prompt(
        role_tag: Role,
        prompt: &RenderedPrompt,
        temperature: f64,
        max_tokens: u32,
        seed: Option<u64>,
    ) -> Self {
        let mut messages = Vec::new();
        if let Some(system) = &prompt.system {
            messages.push(Message {
                speaker: Speaker::System,
                text: system.clone(),
            });
        }
        messages.push(Message {
            speaker: Speaker::User,
            text: prompt.user.clone(),
        });
        CompletionRequest {
            role_tag,
            messages,
            temperature,
            max_tokens,
            seed,
        }
    }

    /// Concatenated user-visible text, used by mock judges.
    fn joined_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Sampling temperature for critique and refinement collection.
pub const SAMPLING_TEMPERATURE: f64 = 0.8;
/// Temperature for judging and evaluation-time refinement.
pub const GREEDY_TEMPERATURE: f64 = 0.0;

/// A successful completion.
#[derive(Debug, Clone)]
pub struct CompletionResult {
    pub text: String,
    pub endpoint_id: String,
    pub latency: Duration,
    /// 1-based attempt that finally succeeded.
    pub attempt: u32,
}

/// Errors surfaced by a backend call.
#[derive(Debug, Clone, thiserror::Error)]
pub enum BackendError {
    /// Worth retrying: timeouts, connection failures, 429/5xx.
    #[error("transient: {0}")]
    Transient(String),
    /// Not worth retrying: auth failures, bad requests.
    #[error("fatal: {0}")]
    Fatal(String),
    /// The reply arrived but did not match the wire format.
    #[error("protocol: {0}")]
    Protocol(String),
}

/// Terminal errors from [`complete`].
#[derive(Debug, Clone, thiserror::Error)]
pub enum GatewayError {
    #[error("endpoint {endpoint_id} failed after {attempts} attempt(s): {message}")]
    Endpoint {
        endpoint_id: String,
        attempts: u32,
        message: String,
    },
    #[error("endpoint {endpoint_id} protocol error: {message}")]
    Protocol {
        endpoint_id: String,
        message: String,
    },
}

/// Anything that can answer completion requests.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn call(&self, request: &CompletionRequest) -> Result<String, BackendError>;
}

/// Retry policy for transient failures.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

/// A shareable endpoint handle: backend plus retry policy.
#[derive(Clone)]
pub struct Endpoint {
    backend: Arc<dyn Backend>,
    pub retry: RetryPolicy,
}

impl Endpoint {
    pub fn new(backend: impl Backend + 'static, retry: RetryPolicy) -> Self {
        Endpoint {
            backend: Arc::new(backend),
            retry,
        }
    }

    pub fn from_arc(backend: Arc<dyn Backend>, retry: RetryPolicy) -> Self {
        Endpoint { backend, retry }
    }

    pub fn id(&self) -> &str {
        self.backend.id()
    }
}

/// Issue one completion, retrying transient failures with exponential
/// backoff. The returned `attempt` counts all tries including the final one.
pub fn complete(
    endpoint: &Endpoint,
    request: &CompletionRequest,
) -> Result<CompletionResult, GatewayError> {
    let start = Instant::now();
    let max = endpoint.retry.max_attempts.max(1);
    let mut last_message = String::new();
    for attempt in 1..=max {
        match endpoint.backend.call(request) {
            Ok(text) => {
                return Ok(CompletionResult {
                    text,
                    endpoint_id: endpoint.id().to_string(),
                    latency: start.elapsed(),
                    attempt,
                })
            }
            Err(BackendError::Transient(message)) => {
                last_message = message;
                if attempt < max {
                    let backoff = endpoint.retry.base_delay * 2u32.saturating_pow(attempt - 1);
                    if !backoff.is_zero() {
                        std::thread::sleep(backoff);
                    }
                }
            }
            Err(BackendError::Fatal(message)) => {
                return Err(GatewayError::Endpoint {
                    endpoint_id: endpoint.id().to_string(),
                    attempts: attempt,
                    message,
                })
            }
            Err(BackendError::Protocol(message)) => {
                return Err(GatewayError::Protocol {
                    endpoint_id: endpoint.id().to_string(),
                    message,
                })
            }
        }
    }
    Err(GatewayError::Endpoint {
        endpoint_id: endpoint.id().to_string(),
        attempts: max,
        message: last_message,
    })
}

/// Run a batch of completions with at most `parallelism` requests in
/// flight. Results align index-for-index with `requests`; a terminal
/// failure occupies its slot without aborting the rest.
pub fn batch_complete(
    endpoint: &Endpoint,
    requests: &[CompletionRequest],
    parallelism: u32,
) -> Vec<Result<CompletionResult, GatewayError>> {
    assert!(parallelism >= 1, "parallelism must be at least 1");
    let workers = (parallelism as usize).min(requests.len().max(1));
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, Result<CompletionResult, GatewayError>)>();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= requests.len() {
                    break;
                }
                let result = complete(endpoint, &requests[idx]);
                if tx.send((idx, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
    });

    let mut slots: Vec<Option<Result<CompletionResult, GatewayError>>> =
        (0..requests.len()).map(|_| None).collect();
    for (idx, result) in rx {
        slots[idx] = Some(result);
    }
    slots
        .into_iter()
        .map(|slot| slot.expect("every request produces a result"))
        .collect()
}

/// Scripted reply policy for the mock backend.
#[derive(Debug, Clone)]
pub enum MockBehavior {
    /// Deterministic pseudo-text from (seed, request).
    Generate,
    /// Always this exact text.
    Fixed(String),
    /// Judge that always emits the given verdict letter.
    ConstantVerdict(char),
    /// Judge that always calls a tie.
    Tie,
    /// Judge whose winner depends only on candidate content; swapping the
    /// candidates therefore flips the verdict letter.
    ConsistentJudge,
}

impl MockBehavior {
    fn label(&self) -> &'static str {
        match self {
            MockBehavior::Generate => "generate",
            MockBehavior::Fixed(_) => "fixed",
            MockBehavior::ConstantVerdict(_) => "constant",
            MockBehavior::Tie => "tie",
            MockBehavior::ConsistentJudge => "consistent",
        }
    }
}

impl From<MockBehaviorKind> for MockBehavior {
    fn from(kind: MockBehaviorKind) -> Self {
        match kind {
            MockBehaviorKind::Generate => MockBehavior::Generate,
            MockBehaviorKind::AlwaysA => MockBehavior::ConstantVerdict('A'),
            MockBehaviorKind::AlwaysB => MockBehavior::ConstantVerdict('B'),
            MockBehaviorKind::Tie => MockBehavior::Tie,
            MockBehaviorKind::Consistent => MockBehavior::ConsistentJudge,
        }
    }
}

fn hash64(parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}

fn extract_candidate(text: &str, letter: char) -> Option<&str> {
    let start_tag = format!("[The Start of Assistant {letter}'s ");
    let start = text.find(&start_tag)?;
    let after_tag = &text[start..];
    let body_start = after_tag.find("]\n")? + 2;
    let body = &after_tag[body_start..];
    let end_tag = format!("\n[The End of Assistant {letter}'s ");
    let end = body.find(&end_tag)?;
    Some(&body[..end])
}

/// Deterministic in-process backend.
pub struct MockBackend {
    id: String,
    seed: u64,
    behavior: MockBehavior,
}

impl MockBackend {
    pub fn new(seed: u64, behavior: MockBehavior) -> Self {
        let id = format!("mock:{}:{}", behavior.label(), seed);
        MockBackend { id, seed, behavior }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    fn request_hash(&self, request: &CompletionRequest) -> u64 {
        let encoded = serde_json::to_vec(request).expect("request serializes");
        hash64(&[&self.seed.to_le_bytes(), &encoded])
    }

    fn verdict_reply(letter: char) -> String {
        format!(
            "Comparing both candidates on the stated criteria, the decision is clear.\n\
             Final verdict: [[{letter}]]"
        )
    }

    fn consistent_reply(&self, request: &CompletionRequest) -> String {
        let text = request.joined_text();
        if let (Some(a), Some(b)) = (extract_candidate(&text, 'A'), extract_candidate(&text, 'B'))
        {
            let score_a = hash64(&[&self.seed.to_le_bytes(), b"candidate", a.as_bytes()]);
            let score_b = hash64(&[&self.seed.to_le_bytes(), b"candidate", b.as_bytes()]);
            let letter = match score_a.cmp(&score_b) {
                std::cmp::Ordering::Greater => 'A',
                std::cmp::Ordering::Less => 'B',
                std::cmp::Ordering::Equal => 'C',
            };
            return Self::verdict_reply(letter);
        }
        let hash = self.request_hash(request);
        if text.contains("[[rating]]") {
            return format!(
                "The answer addresses the task adequately for a synthetic check.\n\
                 Rating: [[{}]]",
                1 + hash % 10
            );
        }
        let letter = if hash.is_multiple_of(2) { 'A' } else { 'B' };
        Self::verdict_reply(letter)
    }
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn call(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let reply = match &self.behavior {
            MockBehavior::Generate => {
                let hash = self.request_hash(request);
                format!(
                    "[mock {} {:016x}]",
                    request.role_tag.name(),
                    hash
                )
            }
            MockBehavior::Fixed(text) => text.clone(),
            MockBehavior::ConstantVerdict(letter) => Self::verdict_reply(*letter),
            MockBehavior::Tie => Self::verdict_reply('C'),
            MockBehavior::ConsistentJudge => self.consistent_reply(request),
        };
        Ok(reply)
    }
}

/// Build a mock endpoint whose reply depends only on (seed, request,
/// behavior). Mock endpoints retry immediately (zero backoff).
pub fn make_mock_backend(seed: u64, behavior: MockBehavior) -> Endpoint {
    Endpoint::new(
        MockBackend::new(seed, behavior),
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::ZERO,
        },
    )
}

/// Test backend that replays a fixed script of outcomes, then repeats the
/// last one. Used for fault injection.
pub struct ScriptedBackend {
    id: String,
    script: Mutex<VecDeque<Result<String, BackendError>>>,
    last: Result<String, BackendError>,
}

impl ScriptedBackend {
    pub fn new(script: Vec<Result<String, BackendError>>) -> Self {
        let last = script
            .last()
            .cloned()
            .unwrap_or_else(|| Ok("scripted".into()));
        ScriptedBackend {
            id: "scripted".into(),
            script: Mutex::new(script.into()),
            last,
        }
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn call(&self, _request: &CompletionRequest) -> Result<String, BackendError> {
        let mut script = self.script.lock().expect("script lock");
        script.pop_front().unwrap_or_else(|| self.last.clone())
    }
}

/// Wrapper that tracks the number of in-flight calls, for verifying the
/// parallelism bound.
pub struct InstrumentedBackend {
    inner: Arc<dyn Backend>,
    in_flight: AtomicU32,
    max_in_flight: AtomicU32,
    hold: Duration,
}

impl InstrumentedBackend {
    pub fn new(inner: Arc<dyn Backend>, hold: Duration) -> Arc<Self> {
        Arc::new(InstrumentedBackend {
            inner,
            in_flight: AtomicU32::new(0),
            max_in_flight: AtomicU32::new(0),
            hold,
        })
    }

    pub fn max_in_flight(&self) -> u32 {
        self.max_in_flight.load(Ordering::SeqCst)
    }
}

impl Backend for InstrumentedBackend {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn call(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let current = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(current, Ordering::SeqCst);
        if !self.hold.is_zero() {
            std::thread::sleep(self.hold);
        }
        let result = self.inner.call(request);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }
}

/// Pull the completion text out of a chat-completion reply body.
pub fn parse_chat_completion(value: &serde_json::Value) -> Result<String, String> {
    value
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .and_then(|m| m.get("content"))
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| "reply missing choices[0].message.content".to_string())
}

/// Chat-completion wire client.
///
/// POSTs `{model, messages, temperature, max_tokens, seed?}` to the
/// configured URL and reads `choices[0].message.content` back.
pub struct HttpBackend {
    id: String,
    url: String,
    token: Option<String>,
    model: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(url: String, token: Option<String>, model: String, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        HttpBackend {
            id: format!("http:{model}"),
            url,
            token,
            model,
            agent: ureq::Agent::new_with_config(config),
        }
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn call(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let messages: Vec<serde_json::Value> = request
            .messages
            .iter()
            .map(|m| {
                serde_json::json!({
                    "role": m.speaker.wire_role(),
                    "content": m.text,
                })
            })
            .collect();
        let mut body = serde_json::json!({
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = serde_json::json!(seed);
        }

        let mut builder = self.agent.post(&self.url);
        if let Some(token) = &self.token {
            builder = builder.header("authorization", &format!("Bearer {token}"));
        }
        let mut response = builder
            .send_json(&body)
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = response.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(BackendError::Transient(format!("http status {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(BackendError::Fatal(format!("http status {status}")));
        }
        let value: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Protocol(format!("invalid reply body: {e}")))?;
        parse_chat_completion(&value).map_err(BackendError::Protocol)
    }
}
