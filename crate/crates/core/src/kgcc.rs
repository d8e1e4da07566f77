//! Knowledge-guided context completion.
//!
//! 1. Summarize each retrieved document against the question (one call per
//!    document; "No useful information" marks a document as useless).
//! 2. Ask the explorer for the missing knowledge, showing it only the useful
//!    summaries, and parse up to `max_knowledge_points` titles.
//! 3. Generate one background document per knowledge point and fill the rest
//!    of the `final_k` slots with question-conditioned documents.
//!
//! Summaries run concurrently; step 2 waits for all of them; generations run
//! concurrently.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::evidence::{EvidenceDoc, Origin};
use crate::llm::{render_documents, ChatMessage, FixtureKey, Gateway, Role};
use crate::question::Question;
use crate::retrieval::ScoredDoc;
use crate::text::normalize_whitespace;
use crate::trace::CallRecord;

pub const SENTINEL: &str = "No useful information";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub doc_id: String,
    pub summary: String,
    pub useful: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgePoint {
    /// 1-based position in the parsed list.
    pub index: usize,
    pub title: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    KnowledgeConditioned { point: usize },
    QuestionConditioned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedDoc {
    /// `gen:<question id>:<slot>`, slots numbered from 1.
    pub doc_id: String,
    pub text: String,
    pub provenance: Provenance,
}

impl GeneratedDoc {
    pub fn to_evidence(&self, points: &[KnowledgePoint]) -> EvidenceDoc {
        let origin = match self.provenance {
            Provenance::KnowledgeConditioned { point } => Origin::KnowledgeConditioned {
                point,
                title: points
                    .iter()
                    .find(|p| p.index == point)
                    .map(|p| p.title.clone())
                    .unwrap_or_default(),
            },
            Provenance::QuestionConditioned => Origin::QuestionConditioned,
        };
        EvidenceDoc {
            doc_id: self.doc_id.clone(),
            title: String::new(),
            text: self.text.clone(),
            origin,
        }
    }
}

/// A few-shot summarization example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub question: String,
    pub document: String,
    pub summary: String,
}

/// Reads a demonstrations file (JSON lines of `{question, document, summary}`).
pub fn load_demonstrations(path: impl AsRef<Path>) -> Result<Vec<Demonstration>, String> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("{} line {}: {e}", path.display(), i + 1)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct KgccConfig {
    pub final_k: usize,
    pub max_knowledge_points: usize,
    /// Extra question-conditioned attempts allowed to replace failed
    /// generations.
    pub refill_budget: usize,
    pub demonstrations: Arc<Vec<Demonstration>>,
}

impl Default for KgccConfig {
    fn default() -> Self {
        KgccConfig {
            final_k: 5,
            max_knowledge_points: 3,
            refill_budget: 3,
            demonstrations: Arc::new(Vec::new()),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct KgccOutcome {
    pub summaries: Vec<SummaryRecord>,
    pub knowledge_points: Vec<KnowledgePoint>,
    pub generated: Vec<GeneratedDoc>,
    pub calls: Vec<CallRecord>,
    pub warnings: Vec<String>,
}

fn strip_label<'a>(text: &'a str, label: &str) -> &'a str {
    let trimmed = text.trim_start();
    let cleaned = trimmed.trim_start_matches(['*', '#', ' ']);
    if cleaned.len() >= label.len() && cleaned[..label.len()].eq_ignore_ascii_case(label) {
        cleaned[label.len()..].trim_start_matches(['*', ':', ' ']).trim()
    } else {
        text.trim()
    }
}

/// True when a summary is the no-information sentinel, ignoring case,
/// surrounding whitespace, quotes, emphasis and trailing punctuation.
pub fn is_sentinel(summary: &str) -> bool {
    let core = summary
        .trim()
        .trim_matches(|c: char| matches!(c, '"' | '\'' | '*' | '.' | '!' | '\u{201c}' | '\u{201d}') || c.is_whitespace());
    normalize_whitespace(core).eq_ignore_ascii_case(SENTINEL)
}

/// Summarizes one retrieved document. `position` is the document's 1-based
/// rank in the retrieved list and keys the fixture (`doc<position>`).
pub fn summarize_document(
    gateway: &Gateway,
    q: &Question,
    doc: &ScoredDoc,
    position: usize,
    demonstrations: &[Demonstration],
) -> (Option<CallRecord>, SummaryRecord) {
    let doc_id = doc.snippet.doc_id.clone();
    let failed = |error: String| SummaryRecord {
        doc_id: doc_id.clone(),
        summary: String::new(),
        useful: false,
        error: Some(error),
    };
    let template = match gateway.role(Role::Summarizer) {
        Ok(c) => &c.template,
        Err(e) => return (None, failed(e.to_string())),
    };
    let mut messages = Vec::new();
    for demo in demonstrations {
        let bindings = BTreeMap::from([
            ("documents", demo.document.clone()),
            ("question", demo.question.clone()),
        ]);
        match template.render_text(&bindings) {
            Ok(text) => {
                messages.push(ChatMessage::user(text));
                messages.push(ChatMessage::assistant(format!("Useful Information: {}", demo.summary)));
            }
            Err(e) => return (None, failed(e.to_string())),
        }
    }
    let bindings = BTreeMap::from([("documents", doc.snippet.passage()), ("question", q.render())]);
    match template.render_text(&bindings) {
        Ok(text) => messages.push(ChatMessage::user(text)),
        Err(e) => return (None, failed(e.to_string())),
    }
    let fixture = FixtureKey::new(Role::Summarizer, &q.id, format!("doc{position}"));
    let request = match gateway.request(Role::Summarizer, messages, fixture, 0) {
        Ok(r) => r,
        Err(e) => return (None, failed(e.to_string())),
    };
    let (call, result) = gateway.chat_recorded(&request);
    let record = match result {
        Ok(resp) => {
            let summary = strip_label(&resp.text, "Useful Information").to_string();
            let useful = !summary.is_empty() && !is_sentinel(&summary);
            SummaryRecord {
                doc_id,
                summary,
                useful,
                error: None,
            }
        }
        Err(e) => failed(e.to_string()),
    };
    (Some(call), record)
}

fn knowledge_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^\s*(?:[-*•+]\s*)?(?:\*\*|__)?\s*knowledge\s*#?\s*(\d+)\s*(?:\*\*|__)?\s*[:：]\s*(?:\*\*|__)?(.*)$")
            .expect("knowledge regex")
    })
}

fn clean_title(raw: &str) -> String {
    let t = raw.trim().trim_matches(|c: char| c == '*' || c == '_' || c.is_whitespace());
    let t = t
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .unwrap_or(t);
    normalize_whitespace(t.trim_matches(|c: char| c == '*' || c == '_' || c.is_whitespace()))
}

/// Extracts `Knowledge i: <title>` lines. Bullet (`- `) and bold (`**`)
/// decorations are accepted. Titles are deduplicated after case-folding and
/// whitespace normalization (first one kept) and capped at `max_points`.
pub fn parse_knowledge_points(text: &str, max_points: usize) -> Vec<KnowledgePoint> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for line in text.lines() {
        if out.len() >= max_points {
            break;
        }
        let Some(caps) = knowledge_line().captures(line) else {
            continue;
        };
        let title = clean_title(&caps[2]);
        if title.is_empty() {
            continue;
        }
        if seen.insert(title.to_lowercase()) {
            out.push(KnowledgePoint {
                index: out.len() + 1,
                title,
            });
        }
    }
    out
}

/// Step 2. Only useful summaries reach the prompt; with none, the
/// information slot reads "None".
pub fn explore_missing_knowledge(
    gateway: &Gateway,
    q: &Question,
    summaries: &[SummaryRecord],
    max_points: usize,
) -> (Option<CallRecord>, Result<Vec<KnowledgePoint>, String>) {
    let useful: Vec<&str> = summaries
        .iter()
        .filter(|s| s.useful)
        .map(|s| s.summary.as_str())
        .collect();
    let information = if useful.is_empty() {
        "None".to_string()
    } else {
        render_documents(&useful)
    };
    let template = match gateway.role(Role::Explorer) {
        Ok(c) => &c.template,
        Err(e) => return (None, Err(e.to_string())),
    };
    let bindings = BTreeMap::from([("information", information), ("question", q.render())]);
    let messages = match template.render(&bindings) {
        Ok(m) => m,
        Err(e) => return (None, Err(e.to_string())),
    };
    let fixture = FixtureKey::new(Role::Explorer, &q.id, "explore");
    let request = match gateway.request(Role::Explorer, messages, fixture, 0) {
        Ok(r) => r,
        Err(e) => return (None, Err(e.to_string())),
    };
    let (call, result) = gateway.chat_recorded(&request);
    let points = result
        .map(|resp| parse_knowledge_points(&resp.text, max_points))
        .map_err(|e| e.to_string());
    (Some(call), points)
}

/// One generation slot: knowledge-conditioned on `point`, or
/// question-conditioned when `point` is `None` (`attempt` then numbers the
/// draw and keys both the fixture `q<attempt>` and the cache sample).
pub fn generate_background(
    gateway: &Gateway,
    q: &Question,
    point: Option<&KnowledgePoint>,
    attempt: usize,
) -> (Option<CallRecord>, Result<(String, Provenance), String>) {
    let config = match gateway.role(Role::Generator) {
        Ok(c) => c,
        Err(e) => return (None, Err(e.to_string())),
    };
    let (template, bindings, disc, sample, provenance) = match point {
        Some(p) => (
            &config.template,
            BTreeMap::from([("question", q.render()), ("knowledge_point", p.title.clone())]),
            format!("k{}", p.index),
            0,
            Provenance::KnowledgeConditioned { point: p.index },
        ),
        None => (
            config.alt(),
            BTreeMap::from([("question", q.render())]),
            format!("q{attempt}"),
            attempt as u32,
            Provenance::QuestionConditioned,
        ),
    };
    let messages = match template.render(&bindings) {
        Ok(m) => m,
        Err(e) => return (None, Err(e.to_string())),
    };
    let fixture = FixtureKey::new(Role::Generator, &q.id, disc);
    let request = match gateway.request(Role::Generator, messages, fixture, sample) {
        Ok(r) => r,
        Err(e) => return (None, Err(e.to_string())),
    };
    let (call, result) = gateway.chat_recorded(&request);
    let outcome = match result {
        Ok(resp) => {
            let text = strip_label(&resp.text, "Background Document").to_string();
            if text.is_empty() {
                Err("generator returned empty text".to_string())
            } else {
                Ok((text, provenance))
            }
        }
        Err(e) => Err(e.to_string()),
    };
    (Some(call), outcome)
}

/// Step 3 on its own: one document per point, then question-conditioned
/// documents up to `final_k`, refilling failures within the budget.
pub fn generate_documents(
    gateway: &Gateway,
    q: &Question,
    points: &[KnowledgePoint],
    config: &KgccConfig,
    out: &mut KgccOutcome,
) {
    let points: Vec<&KnowledgePoint> = points.iter().take(config.final_k).collect();
    let question_slots = config.final_k - points.len();
    let mut tasks: Vec<(Option<&KnowledgePoint>, usize)> = points.iter().map(|p| (Some(*p), 0)).collect();
    tasks.extend((1..=question_slots).map(|j| (None, j)));

    let results: Vec<_> = tasks
        .par_iter()
        .map(|(point, attempt)| generate_background(gateway, q, *point, *attempt))
        .collect();

    let mut texts: Vec<(String, Provenance)> = Vec::new();
    let mut failures = 0usize;
    for (call, result) in results {
        out.calls.extend(call);
        match result {
            Ok(doc) => texts.push(doc),
            Err(e) => {
                failures += 1;
                out.warnings.push(format!("generation failed: {e}"));
            }
        }
    }

    let mut next_attempt = question_slots + 1;
    let mut budget = config.refill_budget;
    while texts.len() < config.final_k && budget > 0 {
        budget -= 1;
        let (call, result) = generate_background(gateway, q, None, next_attempt);
        next_attempt += 1;
        out.calls.extend(call);
        match result {
            Ok(doc) => texts.push(doc),
            Err(e) => out.warnings.push(format!("refill generation failed: {e}")),
        }
    }
    if texts.len() < config.final_k {
        out.warnings.push(format!(
            "generated {} of {} background documents ({failures} initial failures)",
            texts.len(),
            config.final_k
        ));
    }
    out.generated = texts
        .into_iter()
        .enumerate()
        .map(|(i, (text, provenance))| GeneratedDoc {
            doc_id: format!("gen:{}:{}", q.id, i + 1),
            text,
            provenance,
        })
        .collect();
}

/// Runs all three steps over the retrieved set `d_r` (which may be empty).
pub fn complete_context(gateway: &Gateway, q: &Question, d_r: &[ScoredDoc], config: &KgccConfig) -> KgccOutcome {
    let mut out = KgccOutcome::default();

    let summarized: Vec<_> = d_r
        .par_iter()
        .enumerate()
        .map(|(i, doc)| summarize_document(gateway, q, doc, i + 1, &config.demonstrations))
        .collect();
    for (call, record) in summarized {
        out.calls.extend(call);
        if let Some(e) = &record.error {
            out.warnings.push(format!("summary of {} failed: {e}", record.doc_id));
        }
        out.summaries.push(record);
    }

    let (call, points) = explore_missing_knowledge(gateway, q, &out.summaries, config.max_knowledge_points);
    out.calls.extend(call);
    let points = points.unwrap_or_else(|e| {
        out.warnings.push(format!("exploration failed: {e}"));
        Vec::new()
    });
    let points: Vec<KnowledgePoint> = points.into_iter().take(config.final_k).collect();

    generate_documents(gateway, q, &points, config, &mut out);
    out.knowledge_points = points;
    out
}
