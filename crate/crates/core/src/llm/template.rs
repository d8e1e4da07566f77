//! Prompt templates with `{name}` placeholders.
//!
//! A placeholder is `{` + `[a-z_][a-z0-9_]*` + `}`; anything else in braces
//! (such as the JSON sample in the answering prompt) is literal text.
//! Rendering is single-pass, so bound values are never re-expanded.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ChatMessage;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("{0} unbound")]
    Unbound(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub text: String,
}

enum Piece<'a> {
    Literal(&'a str),
    Slot(&'a str),
}

fn is_placeholder_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase() || c == '_')
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

fn pieces(text: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_placeholder_name(&after[..close]) => {
                if open > 0 {
                    out.push(Piece::Literal(&rest[..open]));
                }
                out.push(Piece::Slot(&after[..close]));
                rest = &after[close + 1..];
            }
            _ => {
                out.push(Piece::Literal(&rest[..open + 1]));
                rest = after;
            }
        }
    }
    if !rest.is_empty() {
        out.push(Piece::Literal(rest));
    }
    out
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }

    /// Placeholder names in first-appearance order, deduplicated.
    pub fn placeholders(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        pieces(&self.text)
            .into_iter()
            .filter_map(|p| match p {
                Piece::Slot(name) if seen.insert(name) => Some(name.to_string()),
                _ => None,
            })
            .collect()
    }

    /// Substitutes every placeholder. Fails on the first unbound name;
    /// unused bindings are ignored.
    pub fn render_text(&self, bindings: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.text.len());
        for piece in pieces(&self.text) {
            match piece {
                Piece::Literal(s) => out.push_str(s),
                Piece::Slot(name) => match bindings.get(name) {
                    Some(value) => out.push_str(value),
                    None => return Err(TemplateError::Unbound(name.to_string())),
                },
            }
        }
        Ok(out)
    }

    /// Renders into a single user message.
    pub fn render(&self, bindings: &BTreeMap<&str, String>) -> Result<Vec<ChatMessage>, TemplateError> {
        Ok(vec![ChatMessage::user(self.render_text(bindings)?)])
    }
}

/// Numbered document blocks: `"[1] text\n\n[2] text"`, in input order.
pub fn render_documents<S: AsRef<str>>(docs: &[S]) -> String {
    docs.iter()
        .enumerate()
        .map(|(i, d)| format!("[{}] {}", i + 1, d.as_ref()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::prompts;

    fn bind(pairs: &[(&'static str, &str)]) -> BTreeMap<&'static str, String> {
        pairs.iter().map(|(k, v)| (*k, v.to_string())).collect()
    }

    #[test]
    fn generation_prompt_contains_question_and_point() {
        let t = prompts::generate_knowledge();
        let text = t
            .render_text(&bind(&[("question", "Q-TEXT"), ("knowledge_point", "KP-TEXT")]))
            .unwrap();
        assert!(text.contains("Q-TEXT"));
        assert!(text.contains("KP-TEXT"));
    }

    #[test]
    fn missing_binding_names_the_placeholder() {
        let err = prompts::generate_knowledge()
            .render_text(&bind(&[("question", "q")]))
            .unwrap_err();
        assert_eq!(err.to_string(), "knowledge_point unbound");
    }

    #[test]
    fn ten_documents_are_numbered_one_to_ten() {
        let docs: Vec<String> = (0..10).map(|i| format!("doc {i}")).collect();
        let block = render_documents(&docs);
        for k in 1..=10 {
            assert!(block.contains(&format!("[{k}] doc {}", k - 1)));
        }
        assert!(!block.contains("[11]"));
    }

    #[test]
    fn json_braces_are_literal() {
        let t = prompts::answer();
        assert_eq!(t.placeholders(), vec!["documents", "question"]);
        let text = t
            .render_text(&bind(&[("documents", "D"), ("question", "Q")]))
            .unwrap();
        assert!(text.contains(r#"{"reasoning": "explanation", "answer_choice": "A/B/C/..."}"#));
    }

    #[test]
    fn bound_values_are_not_re_expanded() {
        let t = PromptTemplate::new("t", "{question}|{documents}");
        let text = t
            .render_text(&bind(&[("question", "{documents}"), ("documents", "x")]))
            .unwrap();
        assert_eq!(text, "{documents}|x");
    }

    #[test]
    fn builtin_templates_leave_no_residual_placeholders() {
        let all = bind(&[
            ("question", "q"),
            ("documents", "d"),
            ("information", "i"),
            ("knowledge_point", "k"),
        ]);
        for t in prompts::all() {
            let text = t.render_text(&all).unwrap();
            let rendered = PromptTemplate::new("r", text);
            assert!(rendered.placeholders().is_empty(), "{}", t.id);
        }
    }

    #[test]
    fn unclosed_and_non_identifier_braces() {
        let t = PromptTemplate::new("t", "a { b {Not} {x y} {ok");
        assert!(t.placeholders().is_empty());
        assert_eq!(t.render_text(&BTreeMap::new()).unwrap(), "a { b {Not} {x y} {ok");
    }
}
