//! Evaluation runs: fan questions out over a worker pool, append one
//! `AnswerRecord` per line in question order, and summarize.
//!
//! Files written under the output directory, per mode:
//! `records-<mode>.jsonl`, `timings-<mode>.jsonl`, `summary-<mode>.json`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::Usage;
use crate::pipeline::{Mode, Pipeline};
use crate::question::Question;
use crate::reader::AnswerRecord;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    BadRecord { path: String, line: usize, message: String },
    #[error("no gold label for question(s): {}", .0.join(", "))]
    MissingGold(Vec<String>),
    #[error("record(s) for unknown question id(s): {}", .0.join(", "))]
    UnknownQuestion(Vec<String>),
    #[error("records file {path} was written by mode {found}, expected {expected}")]
    ModeMismatch { path: String, found: Mode, expected: Mode },
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Mode,
    pub output_dir: PathBuf,
    /// Questions processed at once.
    pub concurrency: usize,
    /// Keep existing records and skip their questions.
    pub resume: bool,
}

impl RunConfig {
    pub fn new(mode: Mode, output_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            mode,
            output_dir: output_dir.into(),
            concurrency: 4,
            resume: true,
        }
    }

    pub fn records_path(&self) -> PathBuf {
        records_path(&self.output_dir, self.mode)
    }

    pub fn summary_path(&self) -> PathBuf {
        self.output_dir.join(format!("summary-{}.json", self.mode))
    }

    pub fn timings_path(&self) -> PathBuf {
        self.output_dir.join(format!("timings-{}.jsonl", self.mode))
    }
}

pub fn records_path(output_dir: &Path, mode: Mode) -> PathBuf {
    output_dir.join(format!("records-{mode}.jsonl"))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetScore {
    pub total: usize,
    pub correct: usize,
    pub unparsed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

/// Run-time facts that differ between otherwise identical runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub wall_time_ms: u64,
    /// Questions answered by this invocation (the rest were resumed).
    pub processed: usize,
    pub resumed: usize,
    pub gateway_requests: u64,
    pub backend_calls: u64,
    pub cache_hits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub total: usize,
    pub correct: usize,
    /// Wrong answers, including unparsed ones.
    pub wrong: usize,
    pub unparsed: usize,
    /// Records whose question has no gold label.
    pub unlabeled: usize,
    /// `correct / total`; absent when any question lacks a gold label.
    pub accuracy: Option<f64>,
    pub per_dataset: BTreeMap<String, DatasetScore>,
    /// Mean `|D_f|` over all records.
    pub mean_evidence: f64,
    /// Retrieved share of all final evidence documents, pooled.
    pub retrieved_fraction: Option<f64>,
    pub llm_calls: usize,
    pub usage: Usage,
    /// Records with at least one degraded stage.
    pub records_with_errors: usize,
    #[serde(default)]
    pub stats: RunStats,
}

impl RunSummary {
    /// The summary without its run-time block, for comparing runs.
    pub fn without_stats(&self) -> RunSummary {
        RunSummary {
            stats: RunStats::default(),
            ..self.clone()
        }
    }
}

/// Fraction of `records` whose prediction equals the gold label. Every record
/// must belong to a question with a gold label.
pub fn accuracy(records: &[AnswerRecord], questions: &[Question]) -> Result<f64, HarnessError> {
    let by_id: HashMap<&str, &Question> = questions.iter().map(|q| (q.id.as_str(), q)).collect();
    let unknown: Vec<String> = records
        .iter()
        .filter(|r| !by_id.contains_key(r.question_id.as_str()))
        .map(|r| r.question_id.clone())
        .collect();
    if !unknown.is_empty() {
        return Err(HarnessError::UnknownQuestion(unknown));
    }
    let missing: Vec<String> = records
        .iter()
        .filter(|r| by_id[r.question_id.as_str()].gold.is_none())
        .map(|r| r.question_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(HarnessError::MissingGold(missing));
    }
    if records.is_empty() {
        return Ok(0.0);
    }
    let correct = records
        .iter()
        .filter(|r| by_id[r.question_id.as_str()].gold.as_deref() == Some(r.predicted.as_str()))
        .count();
    Ok(correct as f64 / records.len() as f64)
}

/// Scores `records` against `questions`. Gold labels come from the dataset,
/// not the records.
pub fn summarize(mode: Mode, records: &[AnswerRecord], questions: &[Question]) -> Result<RunSummary, HarnessError> {
    let by_id: HashMap<&str, &Question> = questions.iter().map(|q| (q.id.as_str(), q)).collect();
    let unknown: Vec<String> = records
        .iter()
        .filter(|r| !by_id.contains_key(r.question_id.as_str()))
        .map(|r| r.question_id.clone())
        .collect();
    if !unknown.is_empty() {
        return Err(HarnessError::UnknownQuestion(unknown));
    }

    let mut s = RunSummary {
        mode,
        total: records.len(),
        correct: 0,
        wrong: 0,
        unparsed: 0,
        unlabeled: 0,
        accuracy: None,
        per_dataset: BTreeMap::new(),
        mean_evidence: 0.0,
        retrieved_fraction: None,
        llm_calls: 0,
        usage: Usage::default(),
        records_with_errors: 0,
        stats: RunStats::default(),
    };
    let mut evidence_total = 0usize;
    let mut evidence_retrieved = 0usize;
    let mut unlabeled_sets: HashSet<String> = HashSet::new();
    for r in records {
        let q = by_id[r.question_id.as_str()];
        let entry = s.per_dataset.entry(q.dataset.clone()).or_default();
        entry.total += 1;
        if r.is_unparsed() {
            s.unparsed += 1;
            entry.unparsed += 1;
        }
        match q.gold.as_deref() {
            Some(gold) if gold == r.predicted => {
                s.correct += 1;
                entry.correct += 1;
            }
            Some(_) => s.wrong += 1,
            None => {
                s.unlabeled += 1;
                unlabeled_sets.insert(q.dataset.clone());
            }
        }
        evidence_total += r.evidence.len();
        evidence_retrieved += r.evidence.iter().filter(|e| e.retrieved).count();
        s.llm_calls += r.llm_calls;
        s.usage += r.usage;
        if !r.errors.is_empty() {
            s.records_with_errors += 1;
        }
    }
    if s.total > 0 {
        s.mean_evidence = evidence_total as f64 / s.total as f64;
        if s.unlabeled == 0 {
            s.accuracy = Some(s.correct as f64 / s.total as f64);
        }
    }
    if evidence_total > 0 {
        s.retrieved_fraction = Some(evidence_retrieved as f64 / evidence_total as f64);
    }
    for (name, score) in s.per_dataset.iter_mut() {
        if score.total > 0 && !unlabeled_sets.contains(name) {
            score.accuracy = Some(score.correct as f64 / score.total as f64);
        }
    }
    Ok(s)
}

/// Reads a records file. A torn final line (no trailing newline, not valid
/// JSON) is tolerated and reported as the byte length of the valid prefix.
fn read_records_prefix(path: &Path) -> Result<(Vec<AnswerRecord>, u64), HarnessError> {
    let mut raw = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut raw))
        .map_err(io_err(path))?;
    let mut records = Vec::new();
    let mut offset = 0u64;
    let mut rest = raw.as_str();
    let mut line_no = 0;
    while !rest.is_empty() {
        line_no += 1;
        let (line, complete) = match rest.find('\n') {
            Some(i) => (&rest[..i], true),
            None => (rest, false),
        };
        if !complete {
            // Torn tail from an interrupted write.
            break;
        }
        if !line.trim().is_empty() {
            let record = serde_json::from_str::<AnswerRecord>(line).map_err(|e| HarnessError::BadRecord {
                path: path.display().to_string(),
                line: line_no,
                message: e.to_string(),
            })?;
            records.push(record);
        }
        let consumed = line.len() + 1;
        offset += consumed as u64;
        rest = &rest[consumed..];
    }
    Ok((records, offset))
}

/// All complete records in `path`.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<AnswerRecord>, HarnessError> {
    read_records_prefix(path.as_ref()).map(|(r, _)| r)
}

/// Scores an existing records file against a dataset.
pub fn score(records_path: impl AsRef<Path>, questions: &[Question]) -> Result<RunSummary, HarnessError> {
    let records = read_records(&records_path)?;
    let mode = records.first().map(|r| r.mode).unwrap_or(Mode::Full);
    summarize(mode, &records, questions)
}

#[derive(Serialize)]
struct Timing<'a> {
    question_id: &'a str,
    elapsed_ms: u64,
}

/// Answers every question not already in the records file, then scores the
/// whole file. Stage failures are recorded per question and never abort.
pub fn run(pipeline: &Pipeline, questions: &[Question], config: &RunConfig) -> Result<RunSummary, HarnessError> {
    let started = Instant::now();
    let before = pipeline.gateway().stats();
    std::fs::create_dir_all(&config.output_dir).map_err(io_err(&config.output_dir))?;
    let path = config.records_path();

    let mut existing = Vec::new();
    if config.resume && path.exists() {
        let (records, valid_len) = read_records_prefix(&path)?;
        if let Some(r) = records.iter().find(|r| r.mode != config.mode) {
            return Err(HarnessError::ModeMismatch {
                path: path.display().to_string(),
                found: r.mode,
                expected: config.mode,
            });
        }
        let file = OpenOptions::new().write(true).open(&path).map_err(io_err(&path))?;
        if file.metadata().map_err(io_err(&path))?.len() != valid_len {
            log::warn!("{}: dropping torn trailing record", path.display());
            file.set_len(valid_len).map_err(io_err(&path))?;
        }
        existing = records;
    } else if path.exists() {
        File::create(&path).map_err(io_err(&path))?;
    }
    let done: HashSet<&str> = existing.iter().map(|r| r.question_id.as_str()).collect();
    let pending: Vec<&Question> = questions.iter().filter(|q| !done.contains(q.id.as_str())).collect();
    log::info!(
        "mode {}: {} question(s) to answer, {} already recorded",
        config.mode,
        pending.len(),
        questions.len() - pending.len()
    );

    let mut out = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(io_err(&path))?;
    let timings_path = config.timings_path();
    let mut timings = BufWriter::new(
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&timings_path)
            .map_err(io_err(&timings_path))?,
    );
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.concurrency.max(1))
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;

    let mut fresh: Vec<AnswerRecord> = Vec::with_capacity(pending.len());
    let write_result: Result<(), HarnessError> = std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<(usize, AnswerRecord, u64)>();
        let pending = &pending;
        let mode = config.mode;
        scope.spawn(move || {
            pool.install(|| {
                pending.par_iter().enumerate().for_each_with(tx, |tx, (i, q)| {
                    let t = Instant::now();
                    let record = pipeline.run_question(q, mode);
                    // The receiver only disappears after a write error.
                    let _ = tx.send((i, record, t.elapsed().as_millis() as u64));
                });
            });
        });

        // Single writer; records leave in question order.
        let mut buffer: BTreeMap<usize, (AnswerRecord, u64)> = BTreeMap::new();
        let mut next = 0;
        for (i, record, ms) in rx {
            buffer.insert(i, (record, ms));
            while let Some((record, ms)) = buffer.remove(&next) {
                let mut line = serde_json::to_string(&record).expect("records serialize");
                line.push('\n');
                out.write_all(line.as_bytes()).and_then(|_| out.flush()).map_err(io_err(&path))?;
                let timing = serde_json::to_string(&Timing {
                    question_id: &record.question_id,
                    elapsed_ms: ms,
                })
                .expect("timings serialize");
                writeln!(timings, "{timing}").map_err(io_err(&timings_path))?;
                fresh.push(record);
                next += 1;
            }
        }
        Ok(())
    });
    write_result?;
    timings.flush().map_err(io_err(&timings_path))?;

    let processed = fresh.len();
    let resumed = existing.len();
    let mut all = existing;
    all.extend(fresh);
    let mut summary = summarize(config.mode, &all, questions)?;
    let after = pipeline.gateway().stats();
    summary.stats = RunStats {
        wall_time_ms: started.elapsed().as_millis() as u64,
        processed,
        resumed,
        gateway_requests: after.requests - before.requests,
        backend_calls: after.backend_calls - before.backend_calls,
        cache_hits: after.cache_hits - before.cache_hits,
    };
    write_summary(&config.summary_path(), &summary)?;
    Ok(summary)
}

pub fn write_summary(path: &Path, summary: &RunSummary) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(summary).expect("summary serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_summary(path: &Path) -> Result<RunSummary, HarnessError> {
    let raw = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&raw).map_err(|e| HarnessError::BadRecord {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

const REPORT_COLUMNS: [&str; 11] = [
    "mode",
    "dataset",
    "total",
    "correct",
    "wrong",
    "unparsed",
    "accuracy",
    "mean_|D_f|",
    "retrieved_frac",
    "llm_calls",
    "tokens",
];

fn pct(v: Option<f64>) -> String {
    v.map(|a| format!("{:.2}", a * 100.0)).unwrap_or_else(|| "-".into())
}

fn report_rows(summaries: &[RunSummary]) -> Vec<Vec<String>> {
    summaries
        .iter()
        .map(|s| {
            let datasets: Vec<&str> = s.per_dataset.keys().map(String::as_str).collect();
            vec![
                s.mode.to_string(),
                if datasets.is_empty() { "-".into() } else { datasets.join("+") },
                s.total.to_string(),
                s.correct.to_string(),
                s.wrong.to_string(),
                s.unparsed.to_string(),
                pct(s.accuracy),
                format!("{:.2}", s.mean_evidence),
                s.retrieved_fraction.map(|f| format!("{f:.3}")).unwrap_or_else(|| "-".into()),
                s.llm_calls.to_string(),
                (s.usage.prompt_tokens + s.usage.completion_tokens).to_string(),
            ]
        })
        .collect()
}

/// Aligned text table, one row per summary in the given order. Accuracy is a
/// percentage with two decimals.
pub fn report(summaries: &[RunSummary]) -> String {
    let rows = report_rows(summaries);
    let mut widths: Vec<usize> = REPORT_COLUMNS.iter().map(|c| c.len()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| -> String {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let header: Vec<String> = REPORT_COLUMNS.iter().map(|c| c.to_string()).collect();
    let mut out = line(&header);
    out.push('\n');
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    out.push('\n');
    for row in &rows {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

/// Machine-readable companion to [`report`].
pub fn report_json(summaries: &[RunSummary]) -> serde_json::Value {
    serde_json::json!({
        "columns": REPORT_COLUMNS,
        "rows": report_rows(summaries),
        "summaries": summaries,
    })
}
