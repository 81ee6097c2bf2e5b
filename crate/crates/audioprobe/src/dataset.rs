//! Benchmark item model and manifest ingestion.
//!
//! A manifest is one JSON record per line with fields `id`, `benchmark`,
//! `task_type`, `question`, `choices`, `gold`, `audio_ref`, `category`,
//! `sub_category`. Unknown fields are preserved verbatim and round-tripped
//! into reports. The whole file is rejected on the first invalid record,
//! with the offending line number and field.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::util::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    Mcq,
    OpenEnded,
    InstructionFollowing,
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskType::Mcq => f.write_str("mcq"),
            TaskType::OpenEnded => f.write_str("open_ended"),
            TaskType::InstructionFollowing => f.write_str("instruction_following"),
        }
    }
}

/// Canonical answer. MCQ golds are normalized to a choice index at load
/// time whether the manifest gave an index or the exact choice text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldAnswer {
    Choice(usize),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub id: String,
    pub benchmark: String,
    pub task_type: TaskType,
    pub question: String,
    pub choices: Vec<String>,
    pub gold: GoldAnswer,
    pub audio_ref: Option<PathBuf>,
    pub category: String,
    pub sub_category: Option<String>,
    /// Unknown manifest fields, preserved for report round-tripping.
    pub extra: Map<String, Value>,
}

impl BenchmarkItem {
    pub fn is_mcq(&self) -> bool {
        self.task_type == TaskType::Mcq
    }

    /// Label for choice index `i`: A, B, C, ...
    pub fn choice_label(i: usize) -> char {
        (b'A' + i as u8) as char
    }

    pub fn gold_index(&self) -> Option<usize> {
        match &self.gold {
            GoldAnswer::Choice(i) => Some(*i),
            GoldAnswer::Text(_) => None,
        }
    }

    pub fn gold_label(&self) -> Option<char> {
        self.gold_index().map(Self::choice_label)
    }

    /// The gold answer as text: choice text for MCQ, reference text otherwise.
    pub fn gold_text(&self) -> &str {
        match &self.gold {
            GoldAnswer::Choice(i) => &self.choices[*i],
            GoldAnswer::Text(t) => t,
        }
    }
}

/// All items of one manifest, in file order.
#[derive(Debug, Clone)]
pub struct ItemSet {
    pub items: Vec<BenchmarkItem>,
    pub source_path: String,
    /// SHA-256 of the manifest bytes, for provenance.
    pub content_hash: String,
}

impl ItemSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn mcq_items(&self) -> impl Iterator<Item = &BenchmarkItem> {
        self.items.iter().filter(|item| item.is_mcq())
    }

    pub fn get(&self, id: &str) -> Option<&BenchmarkItem> {
        self.items.iter().find(|item| item.id == id)
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest not found: {0}")]
    MissingFile(PathBuf),
    #[error("io error reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: field '{field}': {message}")]
    SchemaViolation {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: duplicate id '{id}'")]
    DuplicateId { line: usize, id: String },
    #[error("manifest contains no records")]
    EmptyManifest,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("item '{0}' is not multiple-choice")]
    NonMcqItem(String),
}

const KNOWN_FIELDS: &[&str] = &[
    "id",
    "benchmark",
    "task_type",
    "question",
    "choices",
    "gold",
    "audio_ref",
    "category",
    "sub_category",
];

/// Load and validate a manifest. Deterministic: the same bytes always
/// produce the same `ItemSet`.
pub fn load_manifest(path: &Path) -> Result<ItemSet, ManifestError> {
    if !path.exists() {
        return Err(ManifestError::MissingFile(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let content_hash = sha256_hex(&bytes);
    let text = String::from_utf8(bytes).map_err(|err| ManifestError::SchemaViolation {
        line: 0,
        field: "record".into(),
        message: format!("manifest is not valid UTF-8: {err}"),
    })?;

    let mut items = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        if raw_line.trim().is_empty() {
            continue;
        }
        let item = parse_record(raw_line, line)?;
        if seen.insert(item.id.clone(), line).is_some() {
            return Err(ManifestError::DuplicateId { line, id: item.id });
        }
        items.push(item);
    }
    if items.is_empty() {
        return Err(ManifestError::EmptyManifest);
    }
    Ok(ItemSet {
        items,
        source_path: path.display().to_string(),
        content_hash,
    })
}

fn violation(line: usize, field: &str, message: impl Into<String>) -> ManifestError {
    ManifestError::SchemaViolation {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn parse_record(raw: &str, line: usize) -> Result<BenchmarkItem, ManifestError> {
    let value: Value = serde_json::from_str(raw)
        .map_err(|err| violation(line, "record", format!("invalid JSON: {err}")))?;
    let object = value
        .as_object()
        .ok_or_else(|| violation(line, "record", "record must be a JSON object"))?;

    let id = required_string(object, "id", line)?;
    let benchmark = required_string(object, "benchmark", line)?;
    let task_type = parse_task_type(object, line)?;
    let question = required_string(object, "question", line)?;
    let choices = parse_choices(object, task_type, line)?;
    let gold = parse_gold(object, task_type, &choices, line)?;
    let audio_ref = optional_string(object, "audio_ref", line)?.map(PathBuf::from);
    let category = required_string(object, "category", line)?;
    let sub_category = optional_string(object, "sub_category", line)?;

    let extra: Map<String, Value> = object
        .iter()
        .filter(|(key, _)| !KNOWN_FIELDS.contains(&key.as_str()))
        .map(|(key, val)| (key.clone(), val.clone()))
        .collect();

    Ok(BenchmarkItem {
        id,
        benchmark,
        task_type,
        question,
        choices,
        gold,
        audio_ref,
        category,
        sub_category,
        extra,
    })
}

fn required_string(
    object: &Map<String, Value>,
    field: &str,
    line: usize,
) -> Result<String, ManifestError> {
    match object.get(field) {
        Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
        Some(Value::String(_)) => Err(violation(line, field, "must be non-empty")),
        Some(_) => Err(violation(line, field, "must be a string")),
        None => Err(violation(line, field, "missing required field")),
    }
}

fn optional_string(
    object: &Map<String, Value>,
    field: &str,
    line: usize,
) -> Result<Option<String>, ManifestError> {
    match object.get(field) {
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(Value::Null) | None => Ok(None),
        Some(_) => Err(violation(line, field, "must be a string or null")),
    }
}

fn parse_task_type(object: &Map<String, Value>, line: usize) -> Result<TaskType, ManifestError> {
    let raw = required_string(object, "task_type", line)?;
    match raw.as_str() {
        "mcq" => Ok(TaskType::Mcq),
        "open_ended" => Ok(TaskType::OpenEnded),
        "instruction_following" => Ok(TaskType::InstructionFollowing),
        other => Err(violation(
            line,
            "task_type",
            format!("unknown task type '{other}' (expected mcq, open_ended, or instruction_following)"),
        )),
    }
}

/// Normalization used for duplicate-choice detection and text gold matching.
pub fn normalize_text(text: &str) -> String {
    let lowered = text.to_lowercase();
    let collapsed: Vec<&str> = lowered.split_whitespace().collect();
    collapsed
        .join(" ")
        .trim_matches(|c: char| c.is_ascii_punctuation())
        .trim()
        .to_string()
}

fn parse_choices(
    object: &Map<String, Value>,
    task_type: TaskType,
    line: usize,
) -> Result<Vec<String>, ManifestError> {
    let raw = object.get("choices");
    if task_type != TaskType::Mcq {
        return match raw {
            None | Some(Value::Null) => Ok(Vec::new()),
            Some(Value::Array(arr)) if arr.is_empty() => Ok(Vec::new()),
            Some(_) => Err(violation(
                line,
                "choices",
                format!("only valid for mcq items (task_type is {task_type})"),
            )),
        };
    }
    let arr = match raw {
        Some(Value::Array(arr)) => arr,
        Some(_) => return Err(violation(line, "choices", "must be an array of strings")),
        None => return Err(violation(line, "choices", "missing required field")),
    };
    if arr.len() < 2 {
        return Err(violation(line, "choices", "mcq items need at least 2 choices"));
    }
    let mut choices = Vec::with_capacity(arr.len());
    for entry in arr {
        match entry {
            Value::String(s) if !s.is_empty() => choices.push(s.clone()),
            _ => return Err(violation(line, "choices", "every choice must be a non-empty string")),
        }
    }
    let mut normalized: Vec<String> = choices.iter().map(|c| normalize_text(c)).collect();
    normalized.sort();
    if normalized.windows(2).any(|w| w[0] == w[1]) {
        return Err(violation(
            line,
            "choices",
            "duplicate choice texts after whitespace/case normalization",
        ));
    }
    Ok(choices)
}

fn parse_gold(
    object: &Map<String, Value>,
    task_type: TaskType,
    choices: &[String],
    line: usize,
) -> Result<GoldAnswer, ManifestError> {
    let raw = object
        .get("gold")
        .ok_or_else(|| violation(line, "gold", "missing required field"))?;
    if task_type != TaskType::Mcq {
        return match raw {
            Value::String(s) => Ok(GoldAnswer::Text(s.clone())),
            _ => Err(violation(line, "gold", "must be a string for non-mcq items")),
        };
    }
    match raw {
        Value::Number(num) => {
            let idx = num
                .as_u64()
                .ok_or_else(|| violation(line, "gold", "index must be a non-negative integer"))?
                as usize;
            if idx >= choices.len() {
                return Err(violation(
                    line,
                    "gold",
                    format!("index {idx} out of range for {} choices", choices.len()),
                ));
            }
            Ok(GoldAnswer::Choice(idx))
        }
        Value::String(text) => {
            let matches: Vec<usize> = choices
                .iter()
                .enumerate()
                .filter(|(_, c)| c.as_str() == text)
                .map(|(i, _)| i)
                .collect();
            match matches.as_slice() {
                [idx] => Ok(GoldAnswer::Choice(*idx)),
                [] => Err(violation(
                    line,
                    "gold",
                    format!("'{text}' does not match any choice text"),
                )),
                _ => Err(violation(line, "gold", "matches more than one choice")),
            }
        }
        _ => Err(violation(line, "gold", "must be a choice index or exact choice text")),
    }
}

/// Mean over items of `1 / |choices|`: the accuracy of uniform guessing.
pub fn chance_accuracy(set: &ItemSet) -> Result<f64, DatasetError> {
    chance_accuracy_of(&set.items)
}

/// Same, over a plain slice (used on the MCQ subset in reports).
pub fn chance_accuracy_of(items: &[BenchmarkItem]) -> Result<f64, DatasetError> {
    let mut sum = 0.0;
    for item in items {
        if !item.is_mcq() || item.choices.is_empty() {
            return Err(DatasetError::NonMcqItem(item.id.clone()));
        }
        sum += 1.0 / item.choices.len() as f64;
    }
    Ok(sum / items.len() as f64)
}
