//! Final answering: a chain-of-thought prompt over the evidence (or none, in
//! direct mode) and a tolerant parser for the structured answer object.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::evidence::{EvidenceDoc, EvidenceRef};
use crate::llm::{render_documents, FixtureKey, Gateway, Role, Usage};
use crate::pipeline::Mode;
use crate::question::{AnswerOption, Question};
use crate::trace::{CallRecord, Trace};

pub const UNPARSED: &str = "UNPARSED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub question_id: String,
    #[serde(default)]
    pub dataset: String,
    pub mode: Mode,
    /// An option label, or `"UNPARSED"`.
    pub predicted: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
    pub reasoning: String,
    pub evidence: Vec<EvidenceRef>,
    pub usage: Usage,
    pub llm_calls: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_mapping: Option<BTreeMap<String, String>>,
    pub trace: Trace,
}

impl AnswerRecord {
    pub fn is_unparsed(&self) -> bool {
        self.predicted == UNPARSED
    }

    /// Fraction of the final evidence that was retrieved rather than
    /// generated; `None` when no evidence was used.
    pub fn retrieved_fraction(&self) -> Option<f64> {
        if self.evidence.is_empty() {
            None
        } else {
            Some(self.evidence.iter().filter(|e| e.retrieved).count() as f64 / self.evidence.len() as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParseTier {
    /// The whole response is the answer object.
    Strict,
    /// An answer object embedded in other text.
    Embedded,
    /// A standalone option letter near the word "answer".
    Pattern,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedAnswer {
    pub choice: Option<String>,
    pub reasoning: String,
    pub tier: Option<ParseTier>,
}

impl ParsedAnswer {
    pub fn label(&self) -> &str {
        self.choice.as_deref().unwrap_or(UNPARSED)
    }
}

fn leading_letter() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[(\[]?([A-Za-z])[)\]]?(?:[.:)\s]|$)").expect("letter regex"))
}

fn answer_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"(?i:answer)[\s"'*_]*(?:(?i:choice|option)[\s"'*_]*)?(?:(?i:is)[\s"'*_]*)?[:=\-]?[\s"'*]*[(\[]?([A-Z])\b"#)
            .expect("answer regex")
    })
}

/// Maps a raw `answer_choice` value to an option label: an exact label, a
/// leading letter such as `"B."` or `"(B) Meningioma"`, or an option's text.
fn normalize_choice(value: &str, options: &[AnswerOption]) -> Option<String> {
    let v = value.trim().trim_matches(|c: char| c == '"' || c == '\'' || c == '*');
    if let Some(opt) = options.iter().find(|o| o.label == v) {
        return Some(opt.label.clone());
    }
    if let Some(caps) = leading_letter().captures(v) {
        let letter = caps[1].to_ascii_uppercase();
        if let Some(opt) = options.iter().find(|o| o.label == letter) {
            return Some(opt.label.clone());
        }
        return None;
    }
    let folded = v.trim_end_matches('.').to_lowercase();
    options
        .iter()
        .find(|o| o.text.to_lowercase() == folded)
        .map(|o| o.label.clone())
}

fn from_object(value: &Value) -> Option<(Option<String>, String)> {
    let obj = value.as_object()?;
    let choice = obj.get("answer_choice")?;
    let choice = match choice {
        Value::String(s) => Some(s.clone()),
        _ => None,
    };
    let reasoning = obj
        .get("reasoning")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    Some((choice, reasoning))
}

/// Last JSON object carrying `answer_choice` embedded anywhere in `text`.
fn embedded_object(text: &str) -> Option<(Option<String>, String)> {
    let mut found = None;
    let mut pos = 0;
    while let Some(rel) = text[pos..].find('{') {
        let start = pos + rel;
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(v)) => {
                if let Some(hit) = from_object(&v) {
                    found = Some(hit);
                }
                pos = start + stream.byte_offset().max(1);
            }
            _ => pos = start + 1,
        }
    }
    found
}

/// Three tiers: the whole text as an answer object; an answer object found
/// inside the text; a standalone capital letter after "answer". A structured
/// answer whose choice is not an option is final (no fallthrough).
pub fn parse_answer_with_options(text: &str, options: &[AnswerOption]) -> ParsedAnswer {
    let trimmed = text.trim();
    if let Ok(v) = serde_json::from_str::<Value>(trimmed) {
        if let Some((choice, reasoning)) = from_object(&v) {
            return ParsedAnswer {
                choice: choice.and_then(|c| normalize_choice(&c, options)),
                reasoning,
                tier: Some(ParseTier::Strict),
            };
        }
    }
    if let Some((choice, reasoning)) = embedded_object(trimmed) {
        return ParsedAnswer {
            choice: choice.and_then(|c| normalize_choice(&c, options)),
            reasoning,
            tier: Some(ParseTier::Embedded),
        };
    }
    let choice = answer_pattern()
        .captures_iter(trimmed)
        .filter_map(|c| {
            let letter = &c[1];
            options.iter().find(|o| o.label == letter).map(|o| o.label.clone())
        })
        .last();
    let tier = choice.as_ref().map(|_| ParseTier::Pattern);
    ParsedAnswer {
        choice,
        reasoning: trimmed.to_string(),
        tier,
    }
}

/// Label-only variant of [`parse_answer_with_options`].
pub fn parse_answer(text: &str, labels: &[&str]) -> ParsedAnswer {
    let options: Vec<AnswerOption> = labels
        .iter()
        .map(|l| AnswerOption {
            label: l.to_string(),
            text: String::new(),
        })
        .collect();
    parse_answer_with_options(text, &options)
}

/// The reader's verdict for one question, before the record is assembled.
#[derive(Debug, Clone)]
pub struct ReaderOutput {
    pub predicted: String,
    pub reasoning: String,
    pub error: Option<String>,
}

fn read(gateway: &Gateway, q: &Question, docs: Option<&[EvidenceDoc]>) -> (Option<CallRecord>, ReaderOutput) {
    let failed = |e: String| ReaderOutput {
        predicted: UNPARSED.into(),
        reasoning: String::new(),
        error: Some(e),
    };
    let config = match gateway.role(Role::Reader) {
        Ok(c) => c,
        Err(e) => return (None, failed(e.to_string())),
    };
    let (template, bindings, disc) = match docs {
        Some(docs) => {
            let block = if docs.is_empty() {
                "None".to_string()
            } else {
                render_documents(&docs.iter().map(EvidenceDoc::passage).collect::<Vec<_>>())
            };
            (
                &config.template,
                BTreeMap::from([("documents", block), ("question", q.render())]),
                "answer",
            )
        }
        None => (config.alt(), BTreeMap::from([("question", q.render())]), "direct"),
    };
    let messages = match template.render(&bindings) {
        Ok(m) => m,
        Err(e) => return (None, failed(e.to_string())),
    };
    let request = match gateway.request(Role::Reader, messages, FixtureKey::new(Role::Reader, &q.id, disc), 0) {
        Ok(r) => r,
        Err(e) => return (None, failed(e.to_string())),
    };
    let (call, result) = gateway.chat_recorded(&request);
    let output = match result {
        Ok(resp) => {
            let parsed = parse_answer_with_options(&resp.text, &q.options);
            ReaderOutput {
                predicted: parsed.label().to_string(),
                reasoning: parsed.reasoning,
                error: parsed.choice.is_none().then(|| "reader response not parseable to an option label".to_string()),
            }
        }
        Err(e) => failed(e.to_string()),
    };
    (Some(call), output)
}

/// Answers from `docs` (possibly empty) with the answering prompt.
pub fn answer(gateway: &Gateway, q: &Question, docs: &[EvidenceDoc]) -> (Option<CallRecord>, ReaderOutput) {
    read(gateway, q, Some(docs))
}

/// Answers with the document-free prompt variant.
pub fn direct_answer(gateway: &Gateway, q: &Question) -> (Option<CallRecord>, ReaderOutput) {
    read(gateway, q, None)
}
