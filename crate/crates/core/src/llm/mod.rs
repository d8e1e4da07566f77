//! The single choke point for every LLM call: roles, prompt rendering,
//! backends, the response cache, retries and limits.

pub mod backend;
pub mod cache;
pub mod gateway;
pub mod prompts;
pub mod template;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use backend::{BackendError, ChatBackend, Completion, CountingBackend, OpenAiBackend, ScriptedBackend};
pub use cache::ResponseCache;
pub use gateway::{Gateway, GatewayBuilder, GatewayError, GatewayStats};
pub use template::{render_documents, PromptTemplate, TemplateError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Summarizer,
    Explorer,
    Generator,
    Integrator,
    Reader,
}

impl Role {
    pub const ALL: [Role; 5] = [
        Role::Summarizer,
        Role::Explorer,
        Role::Generator,
        Role::Integrator,
        Role::Reader,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Summarizer => "summarizer",
            Role::Explorer => "explorer",
            Role::Generator => "generator",
            Role::Integrator => "integrator",
            Role::Reader => "reader",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        Role::ALL.into_iter().find(|r| r.as_str() == s)
    }

    /// Generator and explorer sample at 1.2; everything else at 0.2.
    pub fn default_temperature(self) -> f64 {
        match self {
            Role::Generator | Role::Explorer => 1.2,
            _ => 0.2,
        }
    }

    pub fn default_max_tokens(self) -> u32 {
        match self {
            Role::Generator => 256,
            Role::Summarizer | Role::Explorer => 512,
            Role::Integrator | Role::Reader => 1024,
        }
    }

    /// Primary template, plus the variant used by question-conditioned
    /// generation and direct answering.
    pub fn default_templates(self) -> (PromptTemplate, Option<PromptTemplate>) {
        match self {
            Role::Summarizer => (prompts::summarize(), None),
            Role::Explorer => (prompts::explore(), None),
            Role::Generator => (prompts::generate_knowledge(), Some(prompts::generate_question())),
            Role::Integrator => (prompts::select(), None),
            Role::Reader => (prompts::answer(), Some(prompts::answer_direct())),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleConfig {
    pub role: Role,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Backend alias this role is routed to.
    pub backend: String,
    pub template: PromptTemplate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alt_template: Option<PromptTemplate>,
}

impl RoleConfig {
    pub fn with_defaults(role: Role, model: impl Into<String>, backend: impl Into<String>) -> Self {
        let (template, alt_template) = role.default_templates();
        RoleConfig {
            role,
            model: model.into(),
            temperature: role.default_temperature(),
            max_tokens: role.default_max_tokens(),
            backend: backend.into(),
            template,
            alt_template,
        }
    }

    /// The variant template, falling back to the primary one.
    pub fn alt(&self) -> &PromptTemplate {
        self.alt_template.as_ref().unwrap_or(&self.template)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: "assistant".into(),
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }
}

/// Identifies a call for scripted backends: `role/question_id/discriminator`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FixtureKey {
    pub role: Role,
    pub question_id: String,
    pub discriminator: String,
}

impl FixtureKey {
    pub fn new(role: Role, question_id: impl Into<String>, discriminator: impl Into<String>) -> Self {
        Self {
            role,
            question_id: question_id.into(),
            discriminator: discriminator.into(),
        }
    }
}

impl fmt::Display for FixtureKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.role, self.question_id, self.discriminator)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub role: Role,
    pub backend: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub messages: Vec<ChatMessage>,
    /// Distinguishes repeated draws of an identical prompt so each gets its
    /// own cache entry; 0 for ordinary calls.
    pub sample: u32,
    pub fixture: FixtureKey,
}

#[derive(Serialize)]
struct CacheKeyView<'a> {
    model: &'a str,
    temperature: f64,
    max_tokens: u32,
    messages: &'a [ChatMessage],
    #[serde(skip_serializing_if = "is_zero")]
    sample: u32,
}

fn is_zero(n: &u32) -> bool {
    *n == 0
}

impl ChatRequest {
    /// Hex SHA-256 over `(model, temperature, max_tokens, messages[, sample])`.
    pub fn cache_key(&self) -> String {
        let view = CacheKeyView {
            model: &self.model,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            messages: &self.messages,
            sample: self.sample,
        };
        let bytes = serde_json::to_vec(&view).expect("cache key view serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, rhs: Self) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Usage,
    pub backend: String,
    pub cached: bool,
    pub cache_key: String,
}
