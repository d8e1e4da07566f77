//! Okapi BM25 over an in-memory inverted index, one index per source.
//!
//! ```text
//! score(q, d) = Σ_{t ∈ q} idf(t) · tf / (tf + k1 · (1 − b + b · |d| / avgdl))
//! idf(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//! ```
//!
//! Query terms are deduplicated before scoring.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use crate::corpus::Snippet;
use crate::text::tokenize;

use super::{IndexConfig, ScoredDoc};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Posting {
    doc: u32,
    tf: u32,
}

/// Inverse document frequency with the `1 +` smoothing that keeps it
/// positive for every `df ≤ N`.
pub fn idf(doc_count: usize, df: usize) -> f64 {
    let n = doc_count as f64;
    let df = df as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Saturated, length-normalized term weight.
pub fn term_weight(tf: f64, doc_len: f64, avgdl: f64, k1: f64, b: f64) -> f64 {
    if tf == 0.0 {
        return 0.0;
    }
    let norm = if avgdl > 0.0 {
        1.0 - b + b * doc_len / avgdl
    } else {
        1.0
    };
    tf / (tf + k1 * norm)
}

/// Distinct query terms in first-occurrence order.
pub fn query_terms(query: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    tokenize(query)
        .into_iter()
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

/// Ordering used for every ranked list: score descending, then doc_id
/// ascending.
pub fn rank_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

pub struct SourceIndex {
    source: String,
    docs: Vec<Arc<Snippet>>,
    doc_len: Vec<u32>,
    postings: HashMap<String, Vec<Posting>>,
    avgdl: f64,
    /// Document ordinals sorted by doc_id, for zero-score fill.
    by_id: Vec<u32>,
    k1: f64,
    b: f64,
}

impl SourceIndex {
    pub fn build(source: &str, snippets: Vec<Arc<Snippet>>, config: &IndexConfig) -> Self {
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        let mut doc_len = Vec::with_capacity(snippets.len());
        for (ordinal, snippet) in snippets.iter().enumerate() {
            let tokens = tokenize(&snippet.text);
            doc_len.push(tokens.len() as u32);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for token in tokens {
                *tf.entry(token).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting {
                    doc: ordinal as u32,
                    tf: count,
                });
            }
        }
        let total: u64 = doc_len.iter().map(|&l| l as u64).sum();
        let avgdl = if doc_len.is_empty() {
            0.0
        } else {
            total as f64 / doc_len.len() as f64
        };
        let mut by_id: Vec<u32> = (0..snippets.len() as u32).collect();
        by_id.sort_by(|&a, &b| snippets[a as usize].doc_id.cmp(&snippets[b as usize].doc_id));
        SourceIndex {
            source: source.to_string(),
            docs: snippets,
            doc_len,
            postings,
            avgdl,
            by_id,
            k1: config.k1,
            b: config.b,
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    /// Term frequency of `term` in `doc_id`, read from the postings.
    pub fn term_frequency(&self, doc_id: &str, term: &str) -> Option<u32> {
        let ordinal = self.ordinal(doc_id)?;
        Some(
            self.postings
                .get(term)
                .and_then(|p| p.iter().find(|posting| posting.doc == ordinal))
                .map_or(0, |posting| posting.tf),
        )
    }

    fn ordinal(&self, doc_id: &str) -> Option<u32> {
        self.by_id
            .binary_search_by(|&o| self.docs[o as usize].doc_id.as_str().cmp(doc_id))
            .ok()
            .map(|i| self.by_id[i])
    }

    /// Index-based score for every document with at least one query term.
    pub fn score_terms(&self, terms: &[String]) -> HashMap<u32, f64> {
        let mut acc: HashMap<u32, f64> = HashMap::new();
        let n = self.docs.len();
        for term in terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let w_idf = idf(n, list.len());
            for p in list {
                let w = term_weight(
                    p.tf as f64,
                    self.doc_len[p.doc as usize] as f64,
                    self.avgdl,
                    self.k1,
                    self.b,
                );
                *acc.entry(p.doc).or_default() += w_idf * w;
            }
        }
        acc
    }

    /// Score of a single document, or `None` if the id is not in this source.
    pub fn score(&self, query: &str, doc_id: &str) -> Option<f64> {
        let ordinal = self.ordinal(doc_id)?;
        let terms = query_terms(query);
        Some(self.score_terms(&terms).get(&ordinal).copied().unwrap_or(0.0))
    }

    /// Top `n` documents for `query`. When fewer than `n` documents match,
    /// the list is filled with zero-score documents in doc_id order so every
    /// source contributes `min(n, |C|)` candidates. An empty query (no
    /// tokens) returns nothing.
    pub fn top_n(&self, query: &str, n: usize) -> Vec<ScoredDoc> {
        let terms = query_terms(query);
        if terms.is_empty() || n == 0 || self.docs.is_empty() {
            return Vec::new();
        }
        let scores = self.score_terms(&terms);
        let mut hits: Vec<(u32, f64)> = scores.into_iter().collect();
        hits.sort_by(|a, b| {
            rank_order(
                a.1,
                &self.docs[a.0 as usize].doc_id,
                b.1,
                &self.docs[b.0 as usize].doc_id,
            )
        });
        // positive scores sort ahead of any zero-score filler; ids with a
        // zero accumulated score are merged with the filler by doc_id
        let mut chosen: Vec<(u32, f64)> = hits.iter().copied().filter(|h| h.1 > 0.0).take(n).collect();
        if chosen.len() < n {
            let taken: BTreeSet<u32> = chosen.iter().map(|h| h.0).collect();
            for &o in &self.by_id {
                if chosen.len() == n {
                    break;
                }
                if !taken.contains(&o) {
                    chosen.push((o, 0.0));
                }
            }
        }
        chosen
            .into_iter()
            .enumerate()
            .map(|(i, (o, score))| ScoredDoc {
                snippet: self.docs[o as usize].clone(),
                bm25_score: score,
                rerank_score: None,
                rank: i + 1,
            })
            .collect()
    }
}
