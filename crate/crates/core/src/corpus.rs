//! Snippet corpora from multiple labeled sources.
//!
//! The on-disk store is a directory holding one append-only `snippets.jsonl`
//! file. Every line is a [`StoredSnippet`]; the id → byte-offset map is rebuilt
//! whenever the store is opened. Ingestion is single-writer; once ingestion is
//! done the store is read-only and can be shared between threads.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{normalize_whitespace, tokenize};

const SNIPPETS_FILE: &str = "snippets.jsonl";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid source label {0:?}: use lowercase letters, digits, '_' or '-'")]
    InvalidSource(String),
    #[error("duplicate doc_id {doc_id:?}: first at {first}, again at {second}")]
    DuplicateId {
        doc_id: String,
        first: Occurrence,
        second: Occurrence,
    },
    #[error("doc_id {0:?} not found")]
    NotFound(String),
    #[error("corrupt store line at byte {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Where a doc_id was seen: source label and 1-based input line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occurrence {
    pub source: String,
    pub line: usize,
}

impl std::fmt::Display for Occurrence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} line {}", self.source, self.line)
    }
}

/// One indexable text unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snippet {
    pub doc_id: String,
    pub source: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

impl Snippet {
    /// Passage text as shown to rerankers: `"title. text"` when a title exists.
    pub fn passage(&self) -> String {
        if self.title.is_empty() {
            self.text.clone()
        } else {
            format!("{}. {}", self.title, self.text)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredSnippet {
    #[serde(flatten)]
    snippet: Snippet,
    line: usize,
}

/// A line rejected during ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub per_source: BTreeMap<String, usize>,
    pub total_tokens: usize,
    pub vocabulary_size: usize,
}

impl CorpusStats {
    pub fn total_snippets(&self) -> usize {
        self.per_source.values().sum()
    }
}

/// Result of one `ingest` call: collection-wide stats plus this file's rejects.
#[derive(Debug, Clone)]
pub struct IngestReport {
    pub stats: CorpusStats,
    pub ingested: usize,
    pub rejects: Vec<Reject>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusLine {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    title: Option<String>,
    text: Option<String>,
}

/// Parses one corpus-file line into a snippet.
///
/// `line_no` is 1-based and names the snippet (`<source>:<line>`) when the
/// record carries no `id`.
pub fn parse_record(line: &str, source: &str, line_no: usize) -> Result<Snippet, String> {
    let record: CorpusLine =
        serde_json::from_str(line).map_err(|e| format!("malformed JSON: {e}"))?;
    let text = record.text.ok_or_else(|| "missing required key `text`".to_string())?;
    let text = normalize_whitespace(&text);
    if text.is_empty() {
        return Err("blank text".into());
    }
    let doc_id = match record.id {
        Some(id) => {
            let id = id.trim().to_string();
            if id.is_empty() {
                return Err("blank id".into());
            }
            id
        }
        None => format!("{source}:{line_no}"),
    };
    Ok(Snippet {
        doc_id,
        source: source.to_string(),
        title: normalize_whitespace(record.title.as_deref().unwrap_or("")),
        text,
    })
}

pub fn validate_source_label(source: &str) -> Result<(), CorpusError> {
    let ok = !source.is_empty()
        && source
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-');
    if ok {
        Ok(())
    } else {
        Err(CorpusError::InvalidSource(source.to_string()))
    }
}

struct Entry {
    offset: u64,
    len: u64,
    source: String,
    line: usize,
}

/// A persistent multi-source snippet collection.
pub struct CorpusStore {
    dir: PathBuf,
    entries: HashMap<String, Entry>,
    order: Vec<String>,
    sources: BTreeSet<String>,
    stats: CorpusStats,
    vocabulary: BTreeSet<String>,
    reader: Mutex<Option<File>>,
}

impl CorpusStore {
    /// Opens (or creates) the store in `dir`, rebuilding the offset map.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join(SNIPPETS_FILE);
        let mut store = CorpusStore {
            dir,
            entries: HashMap::new(),
            order: Vec::new(),
            sources: BTreeSet::new(),
            stats: CorpusStats::default(),
            vocabulary: BTreeSet::new(),
            reader: Mutex::new(None),
        };
        if !path.exists() {
            return Ok(store);
        }
        let file = File::open(&path).map_err(io_err(&path))?;
        let mut reader = BufReader::new(file);
        let mut offset = 0u64;
        let mut buf = String::new();
        loop {
            buf.clear();
            let read = reader.read_line(&mut buf).map_err(io_err(&path))?;
            if read == 0 {
                break;
            }
            if !buf.ends_with('\n') {
                // torn tail from an interrupted append; ignored until the
                // next ingestion truncates it
                break;
            }
            let stored: StoredSnippet =
                serde_json::from_str(buf.trim_end()).map_err(|e| CorpusError::Corrupt {
                    offset,
                    reason: e.to_string(),
                })?;
            store.account(&stored, offset, read as u64);
            offset += read as u64;
        }
        Ok(store)
    }

    fn account(&mut self, stored: &StoredSnippet, offset: u64, len: u64) {
        let s = &stored.snippet;
        self.sources.insert(s.source.clone());
        *self.stats.per_source.entry(s.source.clone()).or_default() += 1;
        let tokens = tokenize(&s.text);
        self.stats.total_tokens += tokens.len();
        self.vocabulary.extend(tokens);
        self.stats.vocabulary_size = self.vocabulary.len();
        self.order.push(s.doc_id.clone());
        self.entries.insert(
            s.doc_id.clone(),
            Entry {
                offset,
                len,
                source: s.source.clone(),
                line: stored.line,
            },
        );
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Declares a source label without adding snippets, so it gets an
    /// (empty) index.
    pub fn declare_source(&mut self, source: &str) -> Result<(), CorpusError> {
        validate_source_label(source)?;
        self.sources.insert(source.to_string());
        self.stats.per_source.entry(source.to_string()).or_default();
        Ok(())
    }

    /// Ingests a line-delimited JSON corpus file under `source`.
    ///
    /// Malformed and blank lines are rejected and reported; a duplicate
    /// doc_id (within the file or against the store) aborts the whole file
    /// before anything is written.
    pub fn ingest(&mut self, path: impl AsRef<Path>, source: &str) -> Result<IngestReport, CorpusError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(io_err(path))?;
        self.ingest_reader(BufReader::new(file), source)
    }

    pub fn ingest_reader(&mut self, input: impl BufRead, source: &str) -> Result<IngestReport, CorpusError> {
        validate_source_label(source)?;
        let mut pending: Vec<StoredSnippet> = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        let mut rejects = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(io_err(&self.dir))?;
            if line.trim().is_empty() {
                rejects.push(Reject {
                    line: line_no,
                    reason: "empty line".into(),
                });
                continue;
            }
            match parse_record(&line, source, line_no) {
                Ok(snippet) => {
                    if let Some(existing) = self.entries.get(&snippet.doc_id) {
                        return Err(CorpusError::DuplicateId {
                            doc_id: snippet.doc_id,
                            first: Occurrence {
                                source: existing.source.clone(),
                                line: existing.line,
                            },
                            second: Occurrence {
                                source: source.to_string(),
                                line: line_no,
                            },
                        });
                    }
                    if let Some(&first) = seen.get(&snippet.doc_id) {
                        return Err(CorpusError::DuplicateId {
                            doc_id: snippet.doc_id,
                            first: Occurrence {
                                source: source.to_string(),
                                line: first,
                            },
                            second: Occurrence {
                                source: source.to_string(),
                                line: line_no,
                            },
                        });
                    }
                    seen.insert(snippet.doc_id.clone(), line_no);
                    pending.push(StoredSnippet {
                        snippet,
                        line: line_no,
                    });
                }
                Err(reason) => rejects.push(Reject { line: line_no, reason }),
            }
        }
        self.declare_source(source)?;
        let ingested = pending.len();
        self.append(pending)?;
        Ok(IngestReport {
            stats: self.stats(),
            ingested,
            rejects,
        })
    }

    fn append(&mut self, pending: Vec<StoredSnippet>) -> Result<(), CorpusError> {
        if pending.is_empty() {
            return Ok(());
        }
        let path = self.dir.join(SNIPPETS_FILE);
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        // drop a torn tail left by an interrupted writer
        let valid_len = self
            .entries
            .values()
            .map(|e| e.offset + e.len)
            .max()
            .unwrap_or(0);
        let actual_len = file.metadata().map_err(io_err(&path))?.len();
        if actual_len != valid_len {
            file.set_len(valid_len).map_err(io_err(&path))?;
        }
        let mut offset = valid_len;
        let mut out = Vec::new();
        let mut spans = Vec::with_capacity(pending.len());
        for stored in &pending {
            let mut line = serde_json::to_vec(stored).expect("snippet serializes");
            line.push(b'\n');
            spans.push((offset, line.len() as u64));
            offset += line.len() as u64;
            out.extend_from_slice(&line);
        }
        file.write_all(&out).map_err(io_err(&path))?;
        file.flush().map_err(io_err(&path))?;
        for (stored, (offset, len)) in pending.iter().zip(spans) {
            self.account(stored, offset, len);
        }
        *self.reader.lock().expect("reader lock") = None;
        Ok(())
    }

    /// Fetches one snippet by id, reading it from disk at its recorded offset.
    pub fn get_snippet(&self, doc_id: &str) -> Result<Snippet, CorpusError> {
        let entry = self
            .entries
            .get(doc_id)
            .ok_or_else(|| CorpusError::NotFound(doc_id.to_string()))?;
        let path = self.dir.join(SNIPPETS_FILE);
        let mut guard = self.reader.lock().expect("reader lock");
        if guard.is_none() {
            *guard = Some(File::open(&path).map_err(io_err(&path))?);
        }
        let file = guard.as_mut().expect("reader opened");
        file.seek(SeekFrom::Start(entry.offset)).map_err(io_err(&path))?;
        let mut buf = vec![0u8; entry.len as usize];
        file.read_exact(&mut buf).map_err(io_err(&path))?;
        let stored: StoredSnippet =
            serde_json::from_slice(&buf).map_err(|e| CorpusError::Corrupt {
                offset: entry.offset,
                reason: e.to_string(),
            })?;
        Ok(stored.snippet)
    }

    /// Like [`get_snippet`](Self::get_snippet) but only finds ids stored
    /// under `source`.
    pub fn get_snippet_in(&self, source: &str, doc_id: &str) -> Result<Snippet, CorpusError> {
        match self.entries.get(doc_id) {
            Some(entry) if entry.source == source => self.get_snippet(doc_id),
            _ => Err(CorpusError::NotFound(doc_id.to_string())),
        }
    }

    pub fn sources(&self) -> impl Iterator<Item = &str> {
        self.sources.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn stats(&self) -> CorpusStats {
        self.stats.clone()
    }

    /// All snippets in ingestion order.
    pub fn snippets(&self) -> Result<Vec<Snippet>, CorpusError> {
        let path = self.dir.join(SNIPPETS_FILE);
        if self.order.is_empty() {
            return Ok(Vec::new());
        }
        let file = File::open(&path).map_err(io_err(&path))?;
        let mut out = Vec::with_capacity(self.order.len());
        let mut reader = BufReader::new(file);
        let mut buf = String::new();
        let mut offset = 0u64;
        while out.len() < self.order.len() {
            buf.clear();
            let read = reader.read_line(&mut buf).map_err(io_err(&path))?;
            if read == 0 {
                break;
            }
            let stored: StoredSnippet =
                serde_json::from_str(buf.trim_end()).map_err(|e| CorpusError::Corrupt {
                    offset,
                    reason: e.to_string(),
                })?;
            offset += read as u64;
            out.push(stored.snippet);
        }
        Ok(out)
    }
}

/// Writes a rejects report: one `{"line":..,"reason":..}` object per line.
pub fn write_rejects(path: impl AsRef<Path>, rejects: &[Reject]) -> std::io::Result<()> {
    let mut file = std::io::BufWriter::new(File::create(path)?);
    for reject in rejects {
        serde_json::to_writer(&mut file, reject)?;
        file.write_all(b"\n")?;
    }
    file.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn store() -> (tempfile::TempDir, CorpusStore) {
        let dir = tempfile::tempdir().unwrap();
        let store = CorpusStore::open(dir.path().join("store")).unwrap();
        (dir, store)
    }

    fn ingest(store: &mut CorpusStore, body: &str, source: &str) -> IngestReport {
        store.ingest_reader(Cursor::new(body.to_string()), source).unwrap()
    }

    #[test]
    fn three_lines_three_snippets() {
        let (_d, mut s) = store();
        let body = r#"{"text":"alpha one"}
{"text":"beta two"}
{"text":"gamma three"}
"#;
        let report = ingest(&mut s, body, "textbook");
        assert_eq!(report.stats.per_source["textbook"], 3);
        assert!(report.rejects.is_empty());
        assert_eq!(s.get_snippet("textbook:2").unwrap().text, "beta two");
    }

    #[test]
    fn blank_text_line_is_rejected_and_ingestion_continues() {
        let (_d, mut s) = store();
        let body = r#"{"text":"a1 b1"}
{"text":"a2 b2"}
{"text":"   \t "}
{"text":"a4 b4"}
{"text":"a5 b5"}
"#;
        let report = ingest(&mut s, body, "textbook");
        assert_eq!(report.ingested, 4);
        assert_eq!(
            report.rejects,
            vec![Reject {
                line: 3,
                reason: "blank text".into()
            }]
        );
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let (_d, mut s) = store();
        let body = "{\"text\":\"ok\"}\nnot json\n{\"title\":\"x\"}\n";
        let report = ingest(&mut s, body, "wiki");
        assert_eq!(report.ingested, 1);
        assert_eq!(report.rejects.len(), 2);
        assert_eq!(report.rejects[0].line, 2);
        assert!(report.rejects[0].reason.starts_with("malformed JSON"));
        assert_eq!(report.rejects[1].line, 3);
        assert!(report.rejects[1].reason.contains("text"));
    }

    #[test]
    fn sources_are_counted_independently() {
        let (_d, mut s) = store();
        ingest(&mut s, "{\"text\":\"a\"}\n{\"text\":\"b\"}\n", "textbook");
        let report = ingest(&mut s, "{\"text\":\"c\"}\n", "wikipedia");
        assert_eq!(report.stats.per_source["textbook"], 2);
        assert_eq!(report.stats.per_source["wikipedia"], 1);
    }

    #[test]
    fn duplicate_id_names_both_occurrences() {
        let (_d, mut s) = store();
        let body = "{\"id\":\"x\",\"text\":\"a\"}\n{\"id\":\"y\",\"text\":\"b\"}\n{\"id\":\"x\",\"text\":\"c\"}\n";
        let err = s.ingest_reader(Cursor::new(body), "textbook").unwrap_err();
        match err {
            CorpusError::DuplicateId { doc_id, first, second } => {
                assert_eq!(doc_id, "x");
                assert_eq!(first.line, 1);
                assert_eq!(second.line, 3);
            }
            other => panic!("unexpected {other}"),
        }
        assert!(s.is_empty(), "nothing persisted on duplicate");

        ingest(&mut s, "{\"id\":\"x\",\"text\":\"a\"}\n", "textbook");
        let err = s
            .ingest_reader(Cursor::new("{\"id\":\"x\",\"text\":\"z\"}\n"), "wikipedia")
            .unwrap_err();
        assert!(err.to_string().contains("textbook line 1"));
        assert!(err.to_string().contains("wikipedia line 1"));
    }

    #[test]
    fn unknown_and_foreign_ids_are_not_found() {
        let (_d, mut s) = store();
        ingest(&mut s, "{\"id\":\"t1\",\"text\":\"a b\"}\n", "textbook");
        ingest(&mut s, "{\"id\":\"w1\",\"text\":\"c d\"}\n", "wikipedia");
        assert!(matches!(s.get_snippet("nope"), Err(CorpusError::NotFound(_))));
        assert!(matches!(
            s.get_snippet_in("textbook", "w1"),
            Err(CorpusError::NotFound(_))
        ));
        assert_eq!(s.get_snippet_in("wikipedia", "w1").unwrap().text, "c d");
    }

    #[test]
    fn reopen_rebuilds_offsets_and_stats() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = CorpusStore::open(dir.path()).unwrap();
            s.ingest_reader(
                Cursor::new("{\"title\":\" T \",\"text\":\"x  y\\nz\"}\n{\"text\":\"w\"}\n"),
                "textbook",
            )
            .unwrap();
        }
        let s = CorpusStore::open(dir.path()).unwrap();
        assert_eq!(s.len(), 2);
        let snip = s.get_snippet("textbook:1").unwrap();
        assert_eq!(snip.text, "x y z");
        assert_eq!(snip.title, "T");
        assert_eq!(s.stats().per_source["textbook"], 2);
    }

    #[test]
    fn torn_tail_is_ignored_then_truncated() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = CorpusStore::open(dir.path()).unwrap();
            s.ingest_reader(Cursor::new("{\"text\":\"aa bb\"}\n"), "textbook")
                .unwrap();
        }
        let path = dir.path().join(SNIPPETS_FILE);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"doc_id\":\"half").unwrap();
        drop(f);
        let mut s = CorpusStore::open(dir.path()).unwrap();
        assert_eq!(s.len(), 1);
        s.ingest_reader(Cursor::new("{\"text\":\"cc dd\"}\n"), "wikipedia")
            .unwrap();
        let s = CorpusStore::open(dir.path()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.get_snippet("wikipedia:1").unwrap().text, "cc dd");
    }

    #[test]
    fn invalid_source_label() {
        let (_d, mut s) = store();
        assert!(matches!(
            s.ingest_reader(Cursor::new(""), "Text Book"),
            Err(CorpusError::InvalidSource(_))
        ));
    }
}
