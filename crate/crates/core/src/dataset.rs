//! Question datasets: one canonical JSON-lines schema plus adapters for the
//! public benchmark layouts.
//!
//! | format     | fields read |
//! |------------|-------------|
//! | `canonical`| `id`, `question`, `options` (object label→text or array of texts), `answer` (label), `dataset` |
//! | `medqa`    | `id`, `question`, `options` (object), `answer_idx` |
//! | `medmcqa`  | `id`, `question`, `opa`..`opd`, `cop` (1-based correct option) |
//! | `mmlu`     | `id`, `question`, `choices` (array), `answer` (0-based index or letter) |
//! | `pubmedqa` | `id`/`pmid`, `question`/`QUESTION`, `final_decision`; contexts are dropped; yes/no/maybe → A/B/C |
//! | `bioasq`   | `id`, `body`/`question`, `exact_answer`/`answer`; yes/no → A/B |
//!
//! Records without an id are named `<format>-<line>`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::corpus::Reject;
use crate::question::Question;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no valid questions in {path} ({rejects} rejected)")]
    Empty { path: String, rejects: usize },
    #[error("{path}: expected {expected} questions, loaded {loaded}")]
    CountMismatch { path: String, expected: usize, loaded: usize },
    #[error("duplicate question id {id:?} at line {line}")]
    DuplicateId { id: String, line: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    #[default]
    Canonical,
    Medqa,
    Medmcqa,
    Mmlu,
    Pubmedqa,
    Bioasq,
}

impl DatasetFormat {
    pub const ALL: [DatasetFormat; 6] = [
        DatasetFormat::Canonical,
        DatasetFormat::Medqa,
        DatasetFormat::Medmcqa,
        DatasetFormat::Mmlu,
        DatasetFormat::Pubmedqa,
        DatasetFormat::Bioasq,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetFormat::Canonical => "canonical",
            DatasetFormat::Medqa => "medqa",
            DatasetFormat::Medmcqa => "medmcqa",
            DatasetFormat::Mmlu => "mmlu",
            DatasetFormat::Pubmedqa => "pubmedqa",
            DatasetFormat::Bioasq => "bioasq",
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DatasetFormat::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| format!("unknown dataset format {s:?}"))
    }
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub questions: Vec<Question>,
    pub rejects: Vec<Reject>,
}

const LETTERS: [&str; 4] = ["A", "B", "C", "D"];

fn str_field<'a>(obj: &'a Map<String, Value>, keys: &[&str]) -> Option<&'a str> {
    keys.iter().find_map(|k| obj.get(*k).and_then(Value::as_str))
}

fn id_field(obj: &Map<String, Value>, keys: &[&str]) -> Option<String> {
    keys.iter().find_map(|k| match obj.get(*k) {
        Some(Value::String(s)) if !s.trim().is_empty() => Some(s.trim().to_string()),
        Some(Value::Number(n)) => Some(n.to_string()),
        _ => None,
    })
}

fn lettered(texts: Vec<String>) -> Vec<(String, String)> {
    LETTERS.iter().map(|l| l.to_string()).zip(texts).collect()
}

fn options_value(v: &Value) -> Result<Vec<(String, String)>, String> {
    match v {
        Value::Object(map) => map
            .iter()
            .map(|(k, v)| {
                v.as_str()
                    .map(|t| (k.clone(), t.to_string()))
                    .ok_or_else(|| format!("option {k:?} is not a string"))
            })
            .collect(),
        Value::Array(items) => {
            if items.len() > LETTERS.len() {
                return Err(format!("{} options, expected 2 to 4", items.len()));
            }
            let texts = items
                .iter()
                .map(|v| v.as_str().map(str::to_string).ok_or_else(|| "option is not a string".to_string()))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(lettered(texts))
        }
        _ => Err("`options` must be an object or an array".into()),
    }
}

fn binary_answer(
    obj: &Map<String, Value>,
    id: String,
    stem: &str,
    answers: &[&str],
    answer_keys: &[&str],
    dataset: &str,
) -> Result<Question, String> {
    let options: Vec<(String, String)> = LETTERS
        .iter()
        .zip(answers)
        .map(|(l, a)| (l.to_string(), a.to_string()))
        .collect();
    let gold = match answer_keys.iter().find_map(|k| obj.get(*k)) {
        None | Some(Value::Null) => None,
        Some(v) => {
            let raw = match v {
                Value::String(s) => s.clone(),
                Value::Array(a) => a.first().and_then(Value::as_str).unwrap_or_default().to_string(),
                other => other.to_string(),
            };
            let norm = raw.trim().to_lowercase();
            let idx = answers
                .iter()
                .position(|a| *a == norm)
                .ok_or_else(|| format!("answer {raw:?} is not one of {answers:?}"))?;
            Some(LETTERS[idx].to_string())
        }
    };
    let mut q = Question::new(id, stem, options, gold, dataset).map_err(|e| e.to_string())?;
    q.label_mapping = Some(
        LETTERS
            .iter()
            .zip(answers)
            .map(|(l, a)| (l.to_string(), a.to_string()))
            .collect::<BTreeMap<_, _>>(),
    );
    Ok(q)
}

/// Parses one dataset line. `line_no` is 1-based.
pub fn parse_record(line: &str, format: DatasetFormat, line_no: usize) -> Result<Question, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("malformed JSON: {e}"))?;
    let obj = value.as_object().ok_or("record is not a JSON object")?;
    let fallback_id = format!("{format}-{line_no}");
    let dataset_name = |default: &str| str_field(obj, &["dataset"]).unwrap_or(default).to_string();
    match format {
        DatasetFormat::Canonical => {
            let id = id_field(obj, &["id"]).unwrap_or(fallback_id);
            let stem = str_field(obj, &["question"]).ok_or("missing `question`")?;
            let options = options_value(obj.get("options").ok_or("missing `options`")?)?;
            let gold = str_field(obj, &["answer"]).map(str::to_string);
            Question::new(id, stem, options, gold, dataset_name("canonical")).map_err(|e| e.to_string())
        }
        DatasetFormat::Medqa => {
            let id = id_field(obj, &["id"]).unwrap_or(fallback_id);
            let stem = str_field(obj, &["question"]).ok_or("missing `question`")?;
            let options = options_value(obj.get("options").ok_or("missing `options`")?)?;
            let gold = str_field(obj, &["answer_idx"]).map(str::to_string);
            Question::new(id, stem, options, gold, dataset_name("medqa")).map_err(|e| e.to_string())
        }
        DatasetFormat::Medmcqa => {
            let id = id_field(obj, &["id"]).unwrap_or(fallback_id);
            let stem = str_field(obj, &["question"]).ok_or("missing `question`")?;
            let texts = ["opa", "opb", "opc", "opd"]
                .iter()
                .map(|k| str_field(obj, &[k]).map(str::to_string).ok_or_else(|| format!("missing `{k}`")))
                .collect::<Result<Vec<_>, _>>()?;
            let gold = match obj.get("cop") {
                None | Some(Value::Null) => None,
                Some(v) => {
                    let n = v.as_u64().ok_or("`cop` is not an integer")?;
                    if !(1..=4).contains(&n) {
                        return Err(format!("`cop` {n} out of range 1..=4"));
                    }
                    Some(LETTERS[n as usize - 1].to_string())
                }
            };
            Question::new(id, stem, lettered(texts), gold, dataset_name("medmcqa")).map_err(|e| e.to_string())
        }
        DatasetFormat::Mmlu => {
            let id = id_field(obj, &["id"]).unwrap_or(fallback_id);
            let stem = str_field(obj, &["question"]).ok_or("missing `question`")?;
            let options = options_value(obj.get("choices").ok_or("missing `choices`")?)?;
            let gold = match obj.get("answer") {
                None | Some(Value::Null) => None,
                Some(Value::Number(n)) => {
                    let i = n.as_u64().ok_or("`answer` index is not a non-negative integer")? as usize;
                    Some(LETTERS.get(i).ok_or_else(|| format!("`answer` index {i} out of range"))?.to_string())
                }
                Some(Value::String(s)) => Some(s.trim().to_string()),
                Some(_) => return Err("`answer` must be an index or a letter".into()),
            };
            Question::new(id, stem, options, gold, dataset_name("mmlu")).map_err(|e| e.to_string())
        }
        DatasetFormat::Pubmedqa => {
            let id = id_field(obj, &["id", "pmid"]).unwrap_or(fallback_id);
            let stem = str_field(obj, &["question", "QUESTION"]).ok_or("missing `question`")?;
            binary_answer(obj, id, stem, &["yes", "no", "maybe"], &["final_decision", "answer"], &dataset_name("pubmedqa"))
        }
        DatasetFormat::Bioasq => {
            let id = id_field(obj, &["id"]).unwrap_or(fallback_id);
            let stem = str_field(obj, &["body", "question"]).ok_or("missing `body`")?;
            binary_answer(obj, id, stem, &["yes", "no"], &["exact_answer", "answer"], &dataset_name("bioasq"))
        }
    }
}

/// Loads and validates a dataset file. Bad records are rejected with their
/// line number; zero valid questions, a duplicate id or a count that
/// differs from `expected_count` is an error.
pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat, expected_count: Option<usize>) -> Result<LoadedDataset, DatasetError> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut questions: Vec<Question> = Vec::new();
    let mut rejects = Vec::new();
    let mut ids = std::collections::HashSet::new();
    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(line, format, line_no) {
            Ok(q) => {
                if !ids.insert(q.id.clone()) {
                    return Err(DatasetError::DuplicateId { id: q.id, line: line_no });
                }
                questions.push(q);
            }
            Err(reason) => rejects.push(Reject { line: line_no, reason }),
        }
    }
    if questions.is_empty() {
        return Err(DatasetError::Empty {
            path: path.display().to_string(),
            rejects: rejects.len(),
        });
    }
    if let Some(expected) = expected_count {
        if expected != questions.len() {
            return Err(DatasetError::CountMismatch {
                path: path.display().to_string(),
                expected,
                loaded: questions.len(),
            });
        }
    }
    Ok(LoadedDataset { questions, rejects })
}
