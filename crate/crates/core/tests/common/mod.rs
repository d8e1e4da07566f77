#![allow(dead_code)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use mcqa_engine::corpus::{CorpusStore, Snippet};
use mcqa_engine::dataset::{load_dataset, DatasetFormat};
use mcqa_engine::kgcc::KgccConfig;
use mcqa_engine::llm::{ChatBackend, Gateway, ResponseCache, ScriptedBackend};
use mcqa_engine::pipeline::Pipeline;
use mcqa_engine::question::Question;
use mcqa_engine::retrieval::rerank::LexicalReranker;
use mcqa_engine::retrieval::{IndexConfig, MultiSourceIndex, SourceBalancedRetriever};
use mcqa_engine::sync::RetryPolicy;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Compares `actual` with a checked-in golden file; `UPDATE_GOLDEN=1`
/// rewrites it instead.
pub fn check_golden(name: &str, actual: &str) -> Result<(), String> {
    let path = golden_dir().join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(golden_dir()).map_err(|e| e.to_string())?;
        std::fs::write(&path, actual).map_err(|e| e.to_string())?;
        return Ok(());
    }
    let expected = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e} (run with UPDATE_GOLDEN=1)", path.display()))?;
    if expected == actual {
        Ok(())
    } else {
        let line = expected
            .lines()
            .zip(actual.lines())
            .position(|(a, b)| a != b)
            .map(|i| i + 1)
            .unwrap_or_else(|| expected.lines().count().min(actual.lines().count()) + 1);
        Err(format!("{} differs from output at line {line}", path.display()))
    }
}

const VOCAB: &[&str] = &[
    "nf2", "merlin", "chromosome", "tumor", "schwannoma", "meningioma", "hearing", "loss", "renal", "carcinoma",
    "astrocytoma", "vascular", "gene", "mutation", "patient", "risk", "bilateral", "vestibular", "nerve", "cell",
    "insulin", "glucose", "kidney", "liver", "cardiac", "murmur", "fever", "infection", "antibiotic", "dose",
    "pregnancy", "fetal", "anemia", "iron", "vitamin", "deficiency", "lung", "asthma", "steroid", "rash",
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_text(rng: &mut impl Rng, min_words: usize, max_words: usize) -> String {
    let n = rng.gen_range(min_words..=max_words);
    (0..n)
        .map(|_| {
            if rng.gen_bool(0.1) {
                // Noise tokens: punctuation, one-letter words, mixed case.
                ["a", "B", "x-ray", "T2", "(IL-6)", "NF2,"].choose(rng).unwrap().to_string()
            } else {
                VOCAB.choose(rng).unwrap().to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// `count` snippets per listed source with random vocabulary text.
pub fn synthetic_corpus(rng: &mut impl Rng, sources: &[(&str, usize)]) -> Vec<Snippet> {
    let mut out = Vec::new();
    for (source, count) in sources {
        for i in 0..*count {
            out.push(Snippet {
                doc_id: format!("{source}-{i:04}"),
                source: source.to_string(),
                title: String::new(),
                text: random_text(rng, 3, 40),
            });
        }
    }
    out
}

pub fn random_query(rng: &mut impl Rng) -> String {
    random_text(rng, 1, 8)
}

/// Brute-force BM25 straight from the formula, one document at a time.
pub fn bm25_oracle(query: &str, docs: &[&Snippet], k1: f64, b: f64) -> HashMap<String, f64> {
    let tokenize = |t: &str| -> Vec<String> {
        t.to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| w.chars().count() >= 2)
            .map(str::to_string)
            .collect()
    };
    let toks: Vec<Vec<String>> = docs.iter().map(|d| tokenize(&d.text)).collect();
    let n = docs.len() as f64;
    let avgdl = toks.iter().map(Vec::len).sum::<usize>() as f64 / n.max(1.0);
    let mut terms = tokenize(query);
    let mut seen = std::collections::HashSet::new();
    terms.retain(|t| seen.insert(t.clone()));
    let mut out = HashMap::new();
    for (d, dt) in docs.iter().zip(&toks) {
        let mut score = 0.0;
        for t in &terms {
            let df = toks.iter().filter(|x| x.contains(t)).count() as f64;
            let tf = dt.iter().filter(|x| *x == t).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            let norm = if avgdl > 0.0 { 1.0 - b + b * dt.len() as f64 / avgdl } else { 1.0 };
            score += idf * tf / (tf + k1 * norm);
        }
        out.insert(d.doc_id.clone(), score);
    }
    out
}

pub fn synthetic_questions(n: usize, seed: u64) -> Vec<Question> {
    let mut rng = rng(seed);
    (0..n)
        .map(|i| {
            let options: Vec<(String, String)> = ["A", "B", "C", "D"]
                .iter()
                .map(|l| (l.to_string(), random_text(&mut rng, 1, 3)))
                .collect();
            Question::new(
                format!("syn-{i:03}"),
                &format!("Which finding fits {}?", random_text(&mut rng, 5, 15)),
                options,
                Some(["A", "B", "C", "D"][i % 4].to_string()),
                "synthetic",
            )
            .unwrap()
        })
        .collect()
}

/// Wildcard fixtures answering every question: `points` knowledge lines from
/// the explorer, an integrator pick of `[1] [3] [6] [8] [10]` and reader
/// answer `A`.
pub fn generic_fixtures(points: usize) -> ScriptedBackend {
    let mut b = ScriptedBackend::new("mock");
    b.insert("summarizer/*/doc1", "No useful information.");
    b.insert("summarizer/*/*", "Useful Information: nf2 merlin chromosome tumor risk.");
    let knowledge: Vec<String> = (1..=points).map(|i| format!("Knowledge {i}: topic number {i}")).collect();
    b.insert("explorer/*/explore", knowledge.join("\n"));
    b.insert("generator/*/*", "Background Document: generated nf2 merlin meningioma text.");
    b.insert("integrator/*/select", "- Reasoning: coverage.\n- Final Selection: [1] [3] [6] [8] [10]");
    b.insert("reader/*/*", r#"{"reasoning": "fixture", "answer_choice": "A"}"#);
    b
}

pub fn gateway(backend: Arc<dyn ChatBackend>, cache: Option<&Path>) -> Gateway {
    let mut b = Gateway::single_backend(backend, "scripted-7b").retry(RetryPolicy::none());
    if let Some(dir) = cache {
        b = b.cache(ResponseCache::open(dir).unwrap());
    }
    b.build().unwrap()
}

pub fn retriever(snippets: Vec<Snippet>, sources: &[&str]) -> SourceBalancedRetriever {
    let index = MultiSourceIndex::build(snippets, sources, IndexConfig::default()).unwrap();
    SourceBalancedRetriever::new(index, Arc::new(LexicalReranker))
}

/// Pipeline over a 2-source synthetic corpus large enough that retrieval
/// always fills `final_k`.
pub fn synthetic_pipeline(backend: Arc<dyn ChatBackend>, cache: Option<&Path>) -> Pipeline {
    let mut r = rng(7);
    let corpus = synthetic_corpus(&mut r, &[("pubmed", 40), ("textbooks", 30)]);
    Pipeline::new(
        Arc::new(gateway(backend, cache)),
        Some(Arc::new(retriever(corpus, &["pubmed", "textbooks"]))),
        KgccConfig::default(),
    )
}

pub fn nf2_question() -> Question {
    load_dataset(data_dir().join("nf2/questions.jsonl"), DatasetFormat::Medqa, Some(1))
        .unwrap()
        .questions
        .remove(0)
}

pub fn nf2_fixtures() -> ScriptedBackend {
    ScriptedBackend::from_file("mock", data_dir().join("nf2/fixtures.json")).unwrap()
}

/// Ingests the NF2 corpus files into a store under `dir`.
pub fn nf2_store(dir: &Path) -> CorpusStore {
    let mut store = CorpusStore::open(dir.join("store")).unwrap();
    store.ingest(data_dir().join("nf2/textbooks.jsonl"), "textbooks").unwrap();
    store.ingest(data_dir().join("nf2/statpearls.jsonl"), "statpearls").unwrap();
    store
}

pub fn nf2_pipeline(dir: &Path, backend: Arc<dyn ChatBackend>) -> Pipeline {
    let store = nf2_store(dir);
    let index = MultiSourceIndex::from_store(&store, IndexConfig::default()).unwrap();
    let retriever = SourceBalancedRetriever::new(index, Arc::new(LexicalReranker));
    Pipeline::new(Arc::new(gateway(backend, None)), Some(Arc::new(retriever)), KgccConfig::default())
}

const RESPONSE_SEEDS: &[&str] = &[
    "Step 3: ... ensure RCC exclusion. Final Selection: [2] [4] [6] [7] [9].",
    "- Reasoning: [1] and [3] overlap.\n- **Final Selection:** [3], [5], [8]",
    "Final Selection: [0] [11] [99999999999999999999] [ 4 ]",
    r#"{"reasoning": "NF2 → meningioma", "answer_choice": "B"}"#,
    "```json\n{\"reasoning\": \"r\", \"answer_choice\": \"(C) Astrocytoma\"}\n```",
    "The answer is (C).",
    "Final answer: B",
    "Knowledge 1: Specific tumor prevalence in NF2\n- Knowledge 2: RCC risk\n**Knowledge 3:** VHL",
    "{\"answer_choice\": 3}",
    "",
];

const SPLICE: &[&str] = &[
    "[", "]", "{", "}", "\"", ":", "\n", "Final Selection", "answer_choice", "Answer:", "[1]", "[10]", "é", "→", "\u{0}",
    "Knowledge 9:", "**", "\\", "[-1]", "E", "null",
];

/// Random strings and mutations of realistic responses.
pub fn fuzz_inputs(seed: u64, count: usize) -> Vec<String> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| {
            if r.gen_bool(0.2) {
                let len = r.gen_range(0..200);
                return (0..len).map(|_| char::from_u32(r.gen_range(0..0x2FFF)).unwrap_or('?')).collect();
            }
            let mut s: Vec<char> = RESPONSE_SEEDS.choose(&mut r).unwrap().chars().collect();
            for _ in 0..r.gen_range(1..8) {
                match r.gen_range(0..4) {
                    0 if !s.is_empty() => {
                        let i = r.gen_range(0..s.len());
                        s.remove(i);
                    }
                    1 => {
                        let i = r.gen_range(0..=s.len());
                        let piece: Vec<char> = SPLICE.choose(&mut r).unwrap().chars().collect();
                        s.splice(i..i, piece);
                    }
                    2 if !s.is_empty() => {
                        let i = r.gen_range(0..s.len());
                        s[i] = char::from(r.gen_range(32u8..127));
                    }
                    _ => {
                        let other: Vec<char> = RESPONSE_SEEDS.choose(&mut r).unwrap().chars().collect();
                        let cut = r.gen_range(0..=other.len());
                        s.extend_from_slice(&other[..cut]);
                    }
                }
            }
            s.into_iter().collect()
        })
        .collect()
}
