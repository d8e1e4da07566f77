//! Per-question stage wiring for every evaluation mode.
//!
//! | mode       | retrieval | summarize/explore | generate          | select           | read |
//! |------------|-----------|-------------------|-------------------|------------------|------|
//! | `full`     | yes       | yes               | knowledge + question | integrator    | docs |
//! | `direct`   | no        | no                | no                | no               | no docs |
//! | `rag_only` | yes       | no                | no                | no (D_r as is)   | docs |
//! | `gag_only` | no        | yes (empty D_r)   | knowledge + question | no (D_g as is) | docs |
//! | `no_kgcc`  | yes       | no                | question only     | integrator       | docs |
//! | `no_kads`  | yes       | yes               | knowledge + question | rerank top-k  | docs |

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::evidence::{EvidenceDoc, EvidenceRef};
use crate::kads::{self, SelectionResult, SelectionTrace};
use crate::kgcc::{self, KgccConfig, KgccOutcome};
use crate::llm::{Gateway, Role};
use crate::question::Question;
use crate::reader::{self, AnswerRecord, ReaderOutput};
use crate::retrieval::{LexicalReranker, Reranker, SourceBalancedRetriever};
use crate::trace::Trace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Full,
    Direct,
    RagOnly,
    GagOnly,
    NoKgcc,
    NoKads,
}

impl Mode {
    pub const ALL: [Mode; 6] = [Mode::Full, Mode::Direct, Mode::RagOnly, Mode::GagOnly, Mode::NoKgcc, Mode::NoKads];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::Direct => "direct",
            Mode::RagOnly => "rag_only",
            Mode::GagOnly => "gag_only",
            Mode::NoKgcc => "no_kgcc",
            Mode::NoKads => "no_kads",
        }
    }

    pub fn uses_retrieval(self) -> bool {
        matches!(self, Mode::Full | Mode::RagOnly | Mode::NoKgcc | Mode::NoKads)
    }

    pub fn uses_generation(self) -> bool {
        matches!(self, Mode::Full | Mode::GagOnly | Mode::NoKgcc | Mode::NoKads)
    }

    /// Summarizer and explorer run.
    pub fn uses_knowledge_exploration(self) -> bool {
        matches!(self, Mode::Full | Mode::GagOnly | Mode::NoKads)
    }

    pub fn uses_integrator(self) -> bool {
        matches!(self, Mode::Full | Mode::NoKgcc)
    }

    /// Roles this mode may call.
    pub fn allowed_roles(self) -> Vec<Role> {
        let mut roles = Vec::new();
        if self.uses_knowledge_exploration() {
            roles.extend([Role::Summarizer, Role::Explorer]);
        }
        if self.uses_generation() {
            roles.push(Role::Generator);
        }
        if self.uses_integrator() {
            roles.push(Role::Integrator);
        }
        roles.push(Role::Reader);
        roles
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode {s:?} (expected one of full, direct, rag_only, gag_only, no_kgcc, no_kads)"))
    }
}

pub struct Pipeline {
    gateway: Arc<Gateway>,
    retriever: Option<Arc<SourceBalancedRetriever>>,
    kgcc: KgccConfig,
    final_k: usize,
    /// Scores candidates for the `no_kads` ranking and the selection fallback.
    selection_reranker: Arc<dyn Reranker>,
}

impl Pipeline {
    pub fn new(gateway: Arc<Gateway>, retriever: Option<Arc<SourceBalancedRetriever>>, kgcc: KgccConfig) -> Self {
        let final_k = kgcc.final_k;
        let selection_reranker = retriever
            .as_ref()
            .map(|r| r.reranker().clone())
            .unwrap_or_else(|| Arc::new(LexicalReranker));
        Pipeline {
            gateway,
            retriever,
            kgcc,
            final_k,
            selection_reranker,
        }
    }

    pub fn with_selection_reranker(mut self, reranker: Arc<dyn Reranker>) -> Self {
        self.selection_reranker = reranker;
        self
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    pub fn final_k(&self) -> usize {
        self.final_k
    }

    pub fn has_retriever(&self) -> bool {
        self.retriever.is_some()
    }

    fn absorb(trace: &mut Trace, out: KgccOutcome) {
        trace.calls.extend(out.calls);
        trace.summaries = out.summaries;
        trace.knowledge_points = out.knowledge_points;
        trace.generated = out.generated;
        trace.warnings.extend(out.warnings);
    }

    /// Runs `mode` for one question. Stage failures degrade and are noted in
    /// the record; they never abort.
    pub fn run_question(&self, q: &Question, mode: Mode) -> AnswerRecord {
        let mut trace = Trace::default();
        let mut errors = Vec::new();

        let retrieved = if mode.uses_retrieval() {
            match &self.retriever {
                Some(r) => {
                    let outcome = r.retrieve(q);
                    if let Some(why) = &outcome.rerank_fallback {
                        trace.warnings.push(format!("rerank fallback: {why}"));
                    }
                    let docs = outcome.retrieved.clone();
                    trace.retrieval = Some(outcome);
                    docs
                }
                None => {
                    errors.push("mode needs retrieval but no corpus index is loaded".to_string());
                    Vec::new()
                }
            }
        } else {
            Vec::new()
        };

        let evidence: Option<Vec<EvidenceDoc>> = match mode {
            Mode::Direct => None,
            Mode::RagOnly => Some(retrieved.iter().map(EvidenceDoc::from).collect()),
            Mode::GagOnly => {
                let out = kgcc::complete_context(&self.gateway, q, &[], &self.kgcc);
                let docs = out.generated.iter().map(|g| g.to_evidence(&out.knowledge_points)).collect();
                Self::absorb(&mut trace, out);
                Some(docs)
            }
            Mode::Full | Mode::NoKgcc | Mode::NoKads => {
                let out = if mode == Mode::NoKgcc {
                    let mut out = KgccOutcome::default();
                    kgcc::generate_documents(&self.gateway, q, &[], &self.kgcc, &mut out);
                    out
                } else {
                    kgcc::complete_context(&self.gateway, q, &retrieved, &self.kgcc)
                };
                if out.generated.is_empty() {
                    errors.push("no background documents generated; using retrieved documents only".into());
                }
                let candidates = kads::build_candidates(&retrieved, &out.generated, &out.knowledge_points);
                Self::absorb(&mut trace, out);
                if candidates.is_empty() {
                    Some(Vec::new())
                } else if mode == Mode::NoKads {
                    let (selected, note) = kads::rerank_select(q, &candidates, self.final_k, self.selection_reranker.as_ref());
                    trace.warnings.extend(note);
                    let docs = kads::evidence_for(&candidates, &selected);
                    trace.selection = Some(SelectionTrace {
                        candidate_order: kads::CANDIDATE_ORDER.into(),
                        labels: candidates.iter().enumerate().map(|(i, c)| (i + 1, c.doc_id.clone())).collect(),
                        result: SelectionResult {
                            reasoning: String::new(),
                            selected,
                            fallback_used: false,
                            fallback_reason: None,
                        },
                    });
                    Some(docs)
                } else {
                    let (call, selection, docs) =
                        kads::select_documents(&self.gateway, q, &candidates, self.final_k, self.selection_reranker.as_ref());
                    trace.calls.extend(call);
                    if let Some(why) = &selection.result.fallback_reason {
                        trace.warnings.push(format!("selection fallback: {why}"));
                    }
                    trace.selection = Some(selection);
                    Some(docs)
                }
            }
        };

        let (call, output): (_, ReaderOutput) = match &evidence {
            Some(docs) => reader::answer(&self.gateway, q, docs),
            None => reader::direct_answer(&self.gateway, q),
        };
        trace.calls.extend(call);
        if let Some(e) = output.error {
            errors.push(e);
        }
        trace.evidence = evidence.as_deref().unwrap_or_default().iter().map(EvidenceRef::from).collect();

        AnswerRecord {
            question_id: q.id.clone(),
            dataset: q.dataset.clone(),
            mode,
            predicted: output.predicted,
            gold: q.gold.clone(),
            reasoning: output.reasoning,
            evidence: trace.evidence.clone(),
            usage: trace.usage(),
            llm_calls: trace.calls.len(),
            errors,
            label_mapping: q.label_mapping.clone(),
            trace,
        }
    }
}
