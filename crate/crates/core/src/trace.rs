//! Per-question stage trace.

use serde::{Deserialize, Serialize};

use crate::evidence::EvidenceRef;
use crate::kads::SelectionTrace;
use crate::kgcc::{GeneratedDoc, KnowledgePoint, SummaryRecord};
use crate::llm::{ChatMessage, ChatRequest, ChatResponse, GatewayError, Role, Usage};
use crate::retrieval::RetrievalOutcome;

/// One gateway call: what was asked and what came back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub role: Role,
    pub fixture: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub sample: u32,
    pub messages: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default)]
    pub usage: Usage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn is_zero(n: &u32) -> bool {
    *n == 0
}

impl CallRecord {
    pub fn new(request: &ChatRequest, result: &Result<ChatResponse, GatewayError>) -> Self {
        let (response, usage, error) = match result {
            Ok(r) => (Some(r.text.clone()), r.usage, None),
            Err(e) => (None, Usage::default(), Some(e.to_string())),
        };
        CallRecord {
            role: request.role,
            fixture: request.fixture.to_string(),
            model: request.model.clone(),
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            sample: request.sample,
            messages: request.messages.clone(),
            response,
            usage,
            error,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<RetrievalOutcome>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub summaries: Vec<SummaryRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub knowledge_points: Vec<KnowledgePoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub generated: Vec<GeneratedDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionTrace>,
    /// Final evidence set handed to the reader.
    #[serde(default)]
    pub evidence: Vec<EvidenceRef>,
    pub calls: Vec<CallRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Trace {
    pub fn calls_for(&self, role: Role) -> usize {
        self.calls.iter().filter(|c| c.role == role).count()
    }

    pub fn usage(&self) -> Usage {
        let mut total = Usage::default();
        for call in &self.calls {
            total += call.usage;
        }
        total
    }
}
