//! Pairwise (query, passage) rerankers.
//!
//! The HTTP contract is `POST {query, passages: [{id, text}]}` answered by
//! `{scores: [{id, score}]}`. [`LexicalReranker`] scores offline by query-term
//! overlap.

use std::collections::{BTreeSet, HashMap};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sync::{RetryPolicy, Semaphore};
use crate::text::tokenize;

use super::bm25::rank_order;

#[derive(Debug, Error)]
pub enum RerankError {
    #[error("reranker transport error after {attempts} attempt(s): {message}")]
    Unreachable { attempts: u32, message: String },
    #[error("reranker returned an invalid response: {0}")]
    InvalidResponse(String),
    #[error("no candidates to rerank")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub text: String,
}

pub trait Reranker: Send + Sync {
    fn id(&self) -> &str;

    /// One score per passage, aligned with the input order.
    fn score(&self, query: &str, passages: &[Passage]) -> Result<Vec<f64>, RerankError>;
}

/// `|query terms ∩ passage terms| / |query terms|` over distinct tokens.
#[derive(Debug, Default, Clone, Copy)]
pub struct LexicalReranker;

pub fn overlap_ratio(query: &str, passage: &str) -> f64 {
    let q: BTreeSet<String> = tokenize(query).into_iter().collect();
    if q.is_empty() {
        return 0.0;
    }
    let d: BTreeSet<String> = tokenize(passage).into_iter().collect();
    q.intersection(&d).count() as f64 / q.len() as f64
}

impl Reranker for LexicalReranker {
    fn id(&self) -> &str {
        "lexical-overlap"
    }

    fn score(&self, query: &str, passages: &[Passage]) -> Result<Vec<f64>, RerankError> {
        Ok(passages.iter().map(|p| overlap_ratio(query, &p.text)).collect())
    }
}

/// Sorts passages by score (descending, ties by ascending id) and returns
/// `(input index, score)` for the best `top_k`.
pub fn rank_passages(
    query: &str,
    passages: &[Passage],
    top_k: usize,
    backend: &dyn Reranker,
) -> Result<Vec<(usize, f64)>, RerankError> {
    if passages.is_empty() {
        return Err(RerankError::Empty);
    }
    let scores = backend.score(query, passages)?;
    if scores.len() != passages.len() {
        return Err(RerankError::InvalidResponse(format!(
            "{} scores for {} passages",
            scores.len(),
            passages.len()
        )));
    }
    if let Some(bad) = scores.iter().position(|s| !s.is_finite()) {
        return Err(RerankError::InvalidResponse(format!(
            "non-finite score for passage {:?}",
            passages[bad].id
        )));
    }
    let mut order: Vec<(usize, f64)> = scores.into_iter().enumerate().collect();
    order.sort_by(|a, b| rank_order(a.1, &passages[a.0].id, b.1, &passages[b.0].id));
    order.truncate(top_k);
    Ok(order)
}

#[derive(Serialize)]
struct RerankRequest<'a> {
    query: &'a str,
    passages: &'a [Passage],
}

#[derive(Deserialize)]
struct RerankResponse {
    scores: Vec<IdScore>,
}

#[derive(Deserialize)]
struct IdScore {
    id: String,
    score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpRerankerConfig {
    pub url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_in_flight() -> usize {
    4
}

/// Cross-encoder service reached over HTTP.
pub struct HttpReranker {
    config: HttpRerankerConfig,
    agent: ureq::Agent,
    in_flight: Semaphore,
    id: String,
}

impl HttpReranker {
    pub fn new(config: HttpRerankerConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .build()
            .into();
        let id = format!("http:{}", config.url);
        HttpReranker {
            in_flight: Semaphore::new(config.max_in_flight),
            config,
            agent,
            id,
        }
    }

    fn attempt(&self, body: &RerankRequest<'_>) -> Result<RerankResponse, (bool, String)> {
        let _permit = self.in_flight.acquire();
        let mut resp = self
            .agent
            .post(&self.config.url)
            .send_json(body)
            .map_err(|e| match e {
                ureq::Error::StatusCode(code) => (code == 429 || code >= 500, format!("HTTP {code}")),
                other => (true, other.to_string()),
            })?;
        resp.body_mut()
            .read_json::<RerankResponse>()
            .map_err(|e| (false, format!("bad body: {e}")))
    }
}

impl Reranker for HttpReranker {
    fn id(&self) -> &str {
        &self.id
    }

    fn score(&self, query: &str, passages: &[Passage]) -> Result<Vec<f64>, RerankError> {
        let body = RerankRequest { query, passages };
        let policy = self.config.retry;
        let mut attempts = 0;
        let response = loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok(r) => break r,
                Err((false, msg)) => return Err(RerankError::InvalidResponse(msg)),
                Err((true, msg)) => {
                    if attempts > policy.max_retries {
                        return Err(RerankError::Unreachable {
                            attempts,
                            message: msg,
                        });
                    }
                    std::thread::sleep(policy.delay(attempts - 1));
                }
            }
        };
        let by_id: HashMap<String, f64> = response
            .scores
            .into_iter()
            .map(|s| (s.id, s.score))
            .collect();
        passages
            .iter()
            .map(|p| {
                by_id
                    .get(&p.id)
                    .copied()
                    .ok_or_else(|| RerankError::InvalidResponse(format!("no score for id {:?}", p.id)))
            })
            .collect()
    }
}
