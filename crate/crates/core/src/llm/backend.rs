use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ChatMessage, ChatRequest, FixtureKey, Usage};

#[derive(Debug, Clone, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("no fixture for {0}")]
    MissingFixture(String),
    #[error("invalid backend response: {0}")]
    InvalidResponse(String),
}

impl BackendError {
    /// Transport failures, rate limiting and server errors are retried.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { code, .. } => *code == 429 || *code >= 500,
            BackendError::MissingFixture(_) | BackendError::InvalidResponse(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
}

pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Arc<B> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        (**self).complete(request)
    }
}

/// Chat-completion endpoint speaking the common
/// `POST {base}/chat/completions` JSON contract.
pub struct OpenAiBackend {
    id: String,
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl OpenAiBackend {
    pub fn new(id: impl Into<String>, base_url: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        OpenAiBackend {
            id: id.into(),
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
            agent,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl ChatBackend for OpenAiBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        let body = WireRequest {
            model: &request.model,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let mut call = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call
            .send_json(&body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendError::Status {
                code: status,
                body: body.chars().take(500).collect(),
            });
        }
        let wire: WireResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
        let text = wire
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::InvalidResponse("no choices[0].message.content".into()))?;
        let usage = wire.usage.map_or_else(Usage::default, |u| Usage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        });
        Ok(Completion { text, usage })
    }
}

/// Fixture-driven backend. Keys are `role/question_id/discriminator`; an
/// explicit `*` in the question or discriminator position acts as a
/// wildcard. Requests with no matching key fail.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    id: String,
    fixtures: HashMap<String, String>,
}

impl ScriptedBackend {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            fixtures: HashMap::new(),
        }
    }

    pub fn from_map(id: impl Into<String>, fixtures: HashMap<String, String>) -> Self {
        Self {
            id: id.into(),
            fixtures,
        }
    }

    /// Loads a fixture file: one JSON object mapping keys to response text.
    pub fn from_file(id: impl Into<String>, path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|e| BackendError::InvalidResponse(format!("{}: {e}", path.display())))?;
        Self::from_json(id, &raw)
            .map_err(|e| BackendError::InvalidResponse(format!("{}: {e}", path.display())))
    }

    pub fn from_json(id: impl Into<String>, raw: &str) -> Result<Self, serde_json::Error> {
        let fixtures: HashMap<String, String> = serde_json::from_str(raw)?;
        Ok(Self::from_map(id, fixtures))
    }

    pub fn insert(&mut self, key: impl Into<String>, text: impl Into<String>) -> &mut Self {
        self.fixtures.insert(key.into(), text.into());
        self
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }

    pub fn lookup(&self, key: &FixtureKey) -> Option<&str> {
        let role = key.role.as_str();
        let candidates = [
            format!("{role}/{}/{}", key.question_id, key.discriminator),
            format!("{role}/{}/*", key.question_id),
            format!("{role}/*/{}", key.discriminator),
            format!("{role}/*/*"),
        ];
        candidates
            .iter()
            .find_map(|k| self.fixtures.get(k))
            .map(String::as_str)
    }
}

fn rough_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

impl ChatBackend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        let text = self
            .lookup(&request.fixture)
            .ok_or_else(|| BackendError::MissingFixture(request.fixture.to_string()))?;
        Ok(Completion {
            text: text.to_string(),
            usage: Usage {
                prompt_tokens: request.messages.iter().map(|m| rough_tokens(&m.content)).sum(),
                completion_tokens: rough_tokens(text),
            },
        })
    }
}

/// Wraps a backend and counts calls that reach it.
pub struct CountingBackend<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B: ChatBackend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }
}

impl<B: ChatBackend> ChatBackend for CountingBackend<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }
}
