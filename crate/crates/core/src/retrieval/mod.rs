//! Source-balanced BM25 retrieval followed by reranking.
//!
//! Each source gets its own index and its own top-`per_source_k`; the union
//! of those lists is reranked down to `final_k` documents.

pub mod bm25;
pub mod rerank;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, CorpusStore, Snippet};
use crate::question::Question;

pub use bm25::SourceIndex;
pub use rerank::{HttpReranker, HttpRerankerConfig, LexicalReranker, Passage, RerankError, Reranker};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("invalid index config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Rerank(#[from] RerankError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerId {
    /// Lowercase, split on non-alphanumerics, drop tokens shorter than 2.
    #[default]
    LowercaseWord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexConfig {
    pub k1: f64,
    pub b: f64,
    pub tokenizer: TokenizerId,
    /// Candidates drawn from each source.
    pub per_source_k: usize,
    /// Size of the reranked set.
    pub final_k: usize,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            k1: 0.9,
            b: 0.4,
            tokenizer: TokenizerId::LowercaseWord,
            per_source_k: 32,
            final_k: 5,
        }
    }
}

impl IndexConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(RetrievalError::Config(format!("k1 must be > 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(RetrievalError::Config(format!("b must be in [0, 1], got {}", self.b)));
        }
        if self.final_k == 0 {
            return Err(RetrievalError::Config("final_k must be >= 1".into()));
        }
        if self.per_source_k == 0 {
            return Err(RetrievalError::Config("per_source_k must be >= 1".into()));
        }
        Ok(())
    }
}

/// A snippet with its retrieval scores. `rank` is 1-based within its list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    #[serde(flatten)]
    pub snippet: Arc<Snippet>,
    pub bm25_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rerank_score: Option<f64>,
    pub rank: usize,
}

impl ScoredDoc {
    pub fn doc_id(&self) -> &str {
        &self.snippet.doc_id
    }
}

/// One BM25 index per declared source.
pub struct MultiSourceIndex {
    config: IndexConfig,
    sources: BTreeMap<String, SourceIndex>,
}

impl MultiSourceIndex {
    /// Groups `snippets` by source and indexes each group. Every label in
    /// `declared` gets an index even when it has no snippets.
    pub fn build<I, S>(snippets: I, declared: &[S], config: IndexConfig) -> Result<Self, RetrievalError>
    where
        I: IntoIterator<Item = Snippet>,
        S: AsRef<str>,
    {
        config.validate()?;
        let mut grouped: BTreeMap<String, Vec<Arc<Snippet>>> = declared
            .iter()
            .map(|s| (s.as_ref().to_string(), Vec::new()))
            .collect();
        for snippet in snippets {
            grouped.entry(snippet.source.clone()).or_default().push(Arc::new(snippet));
        }
        let sources = grouped
            .into_iter()
            .map(|(source, docs)| {
                let index = SourceIndex::build(&source, docs, &config);
                (source, index)
            })
            .collect();
        Ok(MultiSourceIndex { config, sources })
    }

    pub fn from_store(store: &CorpusStore, config: IndexConfig) -> Result<Self, RetrievalError> {
        let declared: Vec<String> = store.sources().map(str::to_string).collect();
        Self::build(store.snippets()?, &declared, config)
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn source(&self, label: &str) -> Option<&SourceIndex> {
        self.sources.get(label)
    }

    pub fn sources(&self) -> impl Iterator<Item = &SourceIndex> {
        self.sources.values()
    }

    pub fn total_docs(&self) -> usize {
        self.sources.values().map(SourceIndex::doc_count).sum()
    }

    /// Top `n` per source; every source appears in the map, possibly empty.
    pub fn retrieve_per_source(&self, query: &str, n: usize) -> BTreeMap<String, Vec<ScoredDoc>> {
        self.sources
            .iter()
            .map(|(label, index)| (label.clone(), index.top_n(query, n)))
            .collect()
    }
}

/// Candidate union in source-label order, each source's list in rank order.
pub fn candidate_union(per_source: &BTreeMap<String, Vec<ScoredDoc>>) -> Vec<ScoredDoc> {
    per_source.values().flatten().cloned().collect()
}

/// Reranks `candidates` against `query` and keeps the best `top_k`,
/// re-numbering ranks from 1.
pub fn rerank(
    query: &str,
    candidates: &[ScoredDoc],
    top_k: usize,
    backend: &dyn Reranker,
) -> Result<Vec<ScoredDoc>, RerankError> {
    let passages: Vec<Passage> = candidates
        .iter()
        .map(|c| Passage {
            id: c.snippet.doc_id.clone(),
            text: c.snippet.passage(),
        })
        .collect();
    let order = rerank::rank_passages(query, &passages, top_k, backend)?;
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(i, (idx, score))| ScoredDoc {
            rerank_score: Some(score),
            rank: i + 1,
            ..candidates[idx].clone()
        })
        .collect())
}

/// BM25 ordering over the whole candidate pool, used when the reranker fails.
pub fn bm25_fallback(candidates: &[ScoredDoc], top_k: usize) -> Vec<ScoredDoc> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| bm25::rank_order(a.bm25_score, a.doc_id(), b.bm25_score, b.doc_id()));
    sorted.truncate(top_k);
    for (i, doc) in sorted.iter_mut().enumerate() {
        doc.rank = i + 1;
        doc.rerank_score = None;
    }
    sorted
}

/// Everything the retrieval stage produced for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalOutcome {
    pub per_source: BTreeMap<String, Vec<CandidateRef>>,
    pub retrieved: Vec<ScoredDoc>,
    pub reranker: String,
    /// Set when the reranker failed and BM25 order was used instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rerank_fallback: Option<String>,
}

impl RetrievalOutcome {
    pub fn candidate_count(&self) -> usize {
        self.per_source.values().map(Vec::len).sum()
    }
}

/// Compact view of a first-stage candidate for traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRef {
    pub doc_id: String,
    pub bm25_score: f64,
    pub rank: usize,
}

/// Index plus reranker: the full first stage.
pub struct SourceBalancedRetriever {
    index: MultiSourceIndex,
    reranker: Arc<dyn Reranker>,
}

impl SourceBalancedRetriever {
    pub fn new(index: MultiSourceIndex, reranker: Arc<dyn Reranker>) -> Self {
        Self { index, reranker }
    }

    pub fn index(&self) -> &MultiSourceIndex {
        &self.index
    }

    pub fn reranker(&self) -> &Arc<dyn Reranker> {
        &self.reranker
    }

    pub fn final_k(&self) -> usize {
        self.index.config.final_k
    }

    /// Per-source top-`per_source_k`, union, then rerank to `final_k`.
    pub fn retrieve(&self, q: &Question) -> RetrievalOutcome {
        let query = q.query_text();
        let config = &self.index.config;
        let per_source = self.index.retrieve_per_source(&query, config.per_source_k);
        let pool = candidate_union(&per_source);
        let (retrieved, rerank_fallback) = if pool.is_empty() {
            (Vec::new(), None)
        } else {
            match rerank(&query, &pool, config.final_k, self.reranker.as_ref()) {
                Ok(docs) => (docs, None),
                Err(e) => {
                    log::warn!("question {}: reranker failed, using BM25 order: {e}", q.id);
                    (bm25_fallback(&pool, config.final_k), Some(e.to_string()))
                }
            }
        };
        RetrievalOutcome {
            per_source: per_source
                .into_iter()
                .map(|(source, docs)| {
                    let refs = docs
                        .iter()
                        .map(|d| CandidateRef {
                            doc_id: d.snippet.doc_id.clone(),
                            bm25_score: d.bm25_score,
                            rank: d.rank,
                        })
                        .collect();
                    (source, refs)
                })
                .collect(),
            retrieved,
            reranker: self.reranker.id().to_string(),
            rerank_fallback,
        }
    }
}
