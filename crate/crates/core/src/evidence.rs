//! Evidence documents handed between stages, tagged with where they came from.

use serde::{Deserialize, Serialize};

use crate::retrieval::ScoredDoc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    Retrieved {
        source: String,
        bm25_score: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rerank_score: Option<f64>,
    },
    KnowledgeConditioned {
        point: usize,
        title: String,
    },
    QuestionConditioned,
}

impl Origin {
    pub fn is_retrieved(&self) -> bool {
        matches!(self, Origin::Retrieved { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceDoc {
    pub doc_id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub title: String,
    pub text: String,
    pub origin: Origin,
}

impl EvidenceDoc {
    /// `"title. text"` when titled, else the text.
    pub fn passage(&self) -> String {
        if self.title.is_empty() {
            self.text.clone()
        } else {
            format!("{}. {}", self.title, self.text)
        }
    }
}

impl From<&ScoredDoc> for EvidenceDoc {
    fn from(d: &ScoredDoc) -> Self {
        EvidenceDoc {
            doc_id: d.snippet.doc_id.clone(),
            title: d.snippet.title.clone(),
            text: d.snippet.text.clone(),
            origin: Origin::Retrieved {
                source: d.snippet.source.clone(),
                bm25_score: d.bm25_score,
                rerank_score: d.rerank_score,
            },
        }
    }
}

/// Id and origin of a document in the final evidence set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRef {
    pub doc_id: String,
    pub retrieved: bool,
}

impl From<&EvidenceDoc> for EvidenceRef {
    fn from(d: &EvidenceDoc) -> Self {
        EvidenceRef {
            doc_id: d.doc_id.clone(),
            retrieved: d.origin.is_retrieved(),
        }
    }
}
