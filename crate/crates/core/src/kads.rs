//! Knowledge-aware document selection: one integrator call over all
//! retrieved and generated candidates, returning the final evidence set.
//!
//! Candidates are labeled `[1]..[n]`, retrieved documents first (rerank
//! order), then generated ones (provenance order). If the response has no
//! usable `Final Selection:` line, the candidates are reranked against the
//! question instead and the top `final_k` kept.

use std::collections::{BTreeMap, HashSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::evidence::EvidenceDoc;
use crate::kgcc::{GeneratedDoc, KnowledgePoint};
use crate::llm::{render_documents, FixtureKey, Gateway, Role};
use crate::question::Question;
use crate::retrieval::rerank::{rank_passages, LexicalReranker, Passage, Reranker};
use crate::retrieval::ScoredDoc;
use crate::text::clip_words;
use crate::trace::CallRecord;

/// Per-candidate prompt budget, in whitespace-delimited words.
pub const CANDIDATE_WORD_BUDGET: usize = 512;

pub const CANDIDATE_ORDER: &str = "retrieved-then-generated";

/// Labeled candidate pool: `D_r` in rerank order followed by `D_g`.
pub fn build_candidates(retrieved: &[ScoredDoc], generated: &[GeneratedDoc], points: &[KnowledgePoint]) -> Vec<EvidenceDoc> {
    retrieved
        .iter()
        .map(EvidenceDoc::from)
        .chain(generated.iter().map(|g| g.to_evidence(points)))
        .collect()
}

fn final_selection_header() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)final\s+selection").expect("header regex"))
}

fn bracketed_id() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[\s*(\d{1,9})\s*\]").expect("id regex"))
}

/// Extracts the selected labels from the last `Final Selection` header
/// onwards: bracketed integers in `1..=candidates`, deduplicated in order,
/// at most `cap`. Without a header the result is empty.
pub fn parse_selection(text: &str, candidates: usize, cap: usize) -> Vec<usize> {
    let Some(header) = final_selection_header().find_iter(text).last() else {
        return Vec::new();
    };
    let tail = &text[header.end()..];
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for caps in bracketed_id().captures_iter(tail) {
        if out.len() >= cap {
            break;
        }
        let Ok(id) = caps[1].parse::<usize>() else {
            continue;
        };
        if (1..=candidates).contains(&id) && seen.insert(id) {
            out.push(id);
        }
    }
    out
}

/// Reasoning text preceding the last `Final Selection` header, with a
/// leading `Reasoning:` label removed.
pub fn extract_reasoning(text: &str) -> String {
    let head = match final_selection_header().find_iter(text).last() {
        Some(m) => &text[..m.start()],
        None => text,
    };
    let head = head.trim().trim_end_matches(['-', '*', ' ', '\n']).trim();
    let lowered = head.to_lowercase();
    match lowered.find("reasoning:") {
        Some(pos) if lowered[..pos].trim_matches(|c: char| c == '-' || c == '*' || c.is_whitespace()).is_empty() => {
            head[pos + "reasoning:".len()..].trim().to_string()
        }
        _ => head.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub reasoning: String,
    /// Labels as returned (1-based, into the candidate list).
    pub selected: Vec<usize>,
    pub fallback_used: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_reason: Option<String>,
}

/// What the trace keeps about selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub candidate_order: String,
    /// `label → doc_id` for every presented candidate.
    pub labels: BTreeMap<usize, String>,
    #[serde(flatten)]
    pub result: SelectionResult,
}

/// Labels of the best `top_k` candidates under `reranker`, falling back to
/// lexical overlap if the reranker fails.
pub fn rerank_select(q: &Question, candidates: &[EvidenceDoc], top_k: usize, reranker: &dyn Reranker) -> (Vec<usize>, Option<String>) {
    if candidates.is_empty() {
        return (Vec::new(), None);
    }
    let query = q.query_text();
    let passages: Vec<Passage> = candidates
        .iter()
        .map(|c| Passage {
            id: c.doc_id.clone(),
            text: c.passage(),
        })
        .collect();
    let (ranked, note) = match rank_passages(&query, &passages, top_k, reranker) {
        Ok(r) => (r, None),
        Err(e) => {
            let r = rank_passages(&query, &passages, top_k, &LexicalReranker).expect("lexical reranker is infallible on non-empty input");
            (r, Some(format!("reranker failed, used lexical overlap: {e}")))
        }
    };
    (ranked.into_iter().map(|(i, _)| i + 1).collect(), note)
}

/// Final evidence: selected candidates in candidate-label order.
pub fn evidence_for(candidates: &[EvidenceDoc], labels: &[usize]) -> Vec<EvidenceDoc> {
    let mut sorted: Vec<usize> = labels.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    sorted
        .into_iter()
        .filter_map(|l| candidates.get(l.wrapping_sub(1)).cloned())
        .collect()
}

pub fn render_candidates(candidates: &[EvidenceDoc]) -> String {
    let clipped: Vec<String> = candidates
        .iter()
        .map(|c| clip_words(&c.passage(), CANDIDATE_WORD_BUDGET).0)
        .collect();
    render_documents(&clipped)
}

/// One integrator call over `candidates`; falls back to reranking on a
/// failed call or an empty parse.
pub fn select_documents(
    gateway: &Gateway,
    q: &Question,
    candidates: &[EvidenceDoc],
    final_k: usize,
    reranker: &dyn Reranker,
) -> (Option<CallRecord>, SelectionTrace, Vec<EvidenceDoc>) {
    let labels: BTreeMap<usize, String> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| (i + 1, c.doc_id.clone()))
        .collect();
    let mut call_record = None;
    let attempt: Result<(String, Vec<usize>), String> = (|| {
        let config = gateway.role(Role::Integrator).map_err(|e| e.to_string())?;
        let bindings = BTreeMap::from([("documents", render_candidates(candidates)), ("question", q.render())]);
        let messages = config.template.render(&bindings).map_err(|e| e.to_string())?;
        let fixture = FixtureKey::new(Role::Integrator, &q.id, "select");
        let request = gateway
            .request(Role::Integrator, messages, fixture, 0)
            .map_err(|e| e.to_string())?;
        let (call, result) = gateway.chat_recorded(&request);
        call_record = Some(call);
        let resp = result.map_err(|e| e.to_string())?;
        Ok((resp.text.clone(), parse_selection(&resp.text, candidates.len(), final_k)))
    })();

    let result = match attempt {
        Ok((text, selected)) if !selected.is_empty() => SelectionResult {
            reasoning: extract_reasoning(&text),
            selected,
            fallback_used: false,
            fallback_reason: None,
        },
        other => {
            let (reasoning, reason) = match other {
                Ok((text, _)) => (extract_reasoning(&text), "no valid Final Selection ids".to_string()),
                Err(e) => (String::new(), format!("integrator call failed: {e}")),
            };
            let (selected, note) = rerank_select(q, candidates, final_k, reranker);
            SelectionResult {
                reasoning,
                selected,
                fallback_used: true,
                fallback_reason: Some(match note {
                    Some(n) => format!("{reason}; {n}"),
                    None => reason,
                }),
            }
        }
    };
    let evidence = evidence_for(candidates, &result.selected);
    let trace = SelectionTrace {
        candidate_order: CANDIDATE_ORDER.into(),
        labels,
        result,
    };
    (call_record, trace, evidence)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::Origin;

    #[test]
    fn case_selection_line() {
        let text = "Step 3: ... ensure RCC exclusion. Final Selection: [2] [4] [6] [7] [9].";
        assert_eq!(parse_selection(text, 10, 5), vec![2, 4, 6, 7, 9]);
    }

    #[test]
    fn duplicates_collapse() {
        assert_eq!(parse_selection("Final Selection: [1] [1] [3]", 10, 5), vec![1, 3]);
    }

    #[test]
    fn out_of_range_ids_are_dropped() {
        assert_eq!(parse_selection("Final Selection: [12]", 10, 5), Vec::<usize>::new());
        assert_eq!(parse_selection("Final Selection: [0] [3]", 10, 5), vec![3]);
    }

    #[test]
    fn header_is_required() {
        assert!(parse_selection("I would pick [2] and [4] because they mention NF2.", 10, 5).is_empty());
    }

    #[test]
    fn prose_before_ids_and_last_header_wins() {
        let text = "- Reasoning: map [1] [2] [3] to requirements.\nFinal selection (draft): [1]\n- **Final Selection:** [3], [5], [8]";
        assert_eq!(parse_selection(text, 10, 5), vec![3, 5, 8]);
        assert_eq!(extract_reasoning("- Reasoning: because.\n- Final Selection: [1]"), "because.");
    }

    #[test]
    fn selection_is_capped() {
        let text = "Final Selection: [1] [2] [3] [4] [5] [6] [7]";
        assert_eq!(parse_selection(text, 10, 5), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn huge_numbers_do_not_panic() {
        assert!(parse_selection("Final Selection: [99999999999999999999999]", 10, 5).is_empty());
    }

    fn doc(id: &str, text: &str) -> EvidenceDoc {
        EvidenceDoc {
            doc_id: id.into(),
            title: String::new(),
            text: text.into(),
            origin: Origin::QuestionConditioned,
        }
    }

    #[test]
    fn evidence_preserves_candidate_order() {
        let c = vec![doc("a", "1"), doc("b", "2"), doc("c", "3")];
        let ids: Vec<String> = evidence_for(&c, &[3, 1]).into_iter().map(|d| d.doc_id).collect();
        assert_eq!(ids, vec!["a", "c"]);
    }

    #[test]
    fn long_candidates_are_clipped_in_the_prompt() {
        let long = "word ".repeat(600);
        let block = render_candidates(&[doc("a", &long), doc("b", "short")]);
        assert!(block.contains("[1] "));
        assert!(block.contains(crate::text::CLIP_MARKER));
        assert!(block.contains("[2] short"));
    }
}
