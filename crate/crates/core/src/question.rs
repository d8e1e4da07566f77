//! Multiple-choice questions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::normalize_whitespace;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QuestionError {
    #[error("question {0:?}: empty stem")]
    EmptyStem(String),
    #[error("question {id:?}: {count} options, expected 2 to 4")]
    OptionCount { id: String, count: usize },
    #[error("question {id:?}: duplicate option label {label:?}")]
    DuplicateLabel { id: String, label: String },
    #[error("question {id:?}: option {label:?} has empty text")]
    EmptyOption { id: String, label: String },
    #[error("question {id:?}: gold label {gold:?} is not an option label")]
    GoldNotAnOption { id: String, gold: String },
    #[error("question with empty id")]
    EmptyId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub label: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub stem: String,
    /// In dataset order; rendered as `"A. text"` lines without shuffling.
    pub options: Vec<AnswerOption>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
    #[serde(default)]
    pub dataset: String,
    /// Original answer strings for datasets whose options were relabeled
    /// (yes/no/maybe → A/B/C).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_mapping: Option<BTreeMap<String, String>>,
}

impl Question {
    /// Builds and validates a question. Whitespace in the stem and option
    /// texts is normalized.
    pub fn new(
        id: impl Into<String>,
        stem: &str,
        options: Vec<(String, String)>,
        gold: Option<String>,
        dataset: impl Into<String>,
    ) -> Result<Self, QuestionError> {
        let q = Question {
            id: id.into().trim().to_string(),
            stem: normalize_whitespace(stem),
            options: options
                .into_iter()
                .map(|(label, text)| AnswerOption {
                    label: label.trim().to_string(),
                    text: normalize_whitespace(&text),
                })
                .collect(),
            gold: gold.map(|g| g.trim().to_string()),
            dataset: dataset.into(),
            label_mapping: None,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<(), QuestionError> {
        if self.id.is_empty() {
            return Err(QuestionError::EmptyId);
        }
        if self.stem.trim().is_empty() {
            return Err(QuestionError::EmptyStem(self.id.clone()));
        }
        let count = self.options.len();
        if !(2..=4).contains(&count) {
            return Err(QuestionError::OptionCount {
                id: self.id.clone(),
                count,
            });
        }
        for (i, opt) in self.options.iter().enumerate() {
            if opt.label.is_empty() || self.options[..i].iter().any(|o| o.label == opt.label) {
                return Err(QuestionError::DuplicateLabel {
                    id: self.id.clone(),
                    label: opt.label.clone(),
                });
            }
            if opt.text.trim().is_empty() {
                return Err(QuestionError::EmptyOption {
                    id: self.id.clone(),
                    label: opt.label.clone(),
                });
            }
        }
        if let Some(gold) = &self.gold {
            if !self.has_label(gold) {
                return Err(QuestionError::GoldNotAnOption {
                    id: self.id.clone(),
                    gold: gold.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<&str> {
        self.options.iter().map(|o| o.label.as_str()).collect()
    }

    pub fn has_label(&self, label: &str) -> bool {
        self.options.iter().any(|o| o.label == label)
    }

    /// Stem followed by one `"A. text"` line per option.
    pub fn render(&self) -> String {
        let mut out = self.stem.clone();
        for opt in &self.options {
            out.push('\n');
            out.push_str(&opt.label);
            out.push_str(". ");
            out.push_str(&opt.text);
        }
        out
    }

    /// Retrieval and reranking query: the stem plus the option texts.
    pub fn query_text(&self) -> String {
        let mut out = self.stem.clone();
        for opt in &self.options {
            out.push(' ');
            out.push_str(&opt.text);
        }
        out
    }
}
