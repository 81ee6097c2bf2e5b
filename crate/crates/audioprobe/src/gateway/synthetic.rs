//! Synthetic oracle backend: emits responses that the scorer will mark
//! correct exactly where a planted correctness grid says so. Ground truth
//! for end-to-end tests of the diagnostics math.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conditions::Condition;
use crate::dataset::{BenchmarkItem, TaskType};
use crate::util::sha256_u64;

use super::{ModelResponse, Transport};

/// Surface form of synthetic answers, chosen to exercise different scorer
/// paths: bare labels and verbose answers extract via regex; garbled
/// answers defeat extraction and route to the judge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerStyle {
    BareLetter,
    Verbose,
    Garbled,
}

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("synthetic policy does not cover ({item_id}, {condition})")]
    UncoveredCell { item_id: String, condition: Condition },
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid policy file {path}: {message}")]
    Parse { path: String, message: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PolicyCell {
    item_id: String,
    condition: Condition,
    correct: bool,
}

/// Planted per-cell correctness plus the answer style and seed that shape
/// the emitted text.
#[derive(Debug, Clone)]
pub struct SyntheticPolicy {
    pub answer_style: AnswerStyle,
    pub seed: u64,
    cells: BTreeMap<(String, Condition), bool>,
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    answer_style: AnswerStyle,
    seed: u64,
    cells: Vec<PolicyCell>,
}

impl SyntheticPolicy {
    pub fn new(answer_style: AnswerStyle, seed: u64) -> Self {
        Self {
            answer_style,
            seed,
            cells: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, item_id: impl Into<String>, condition: Condition, correct: bool) {
        self.cells.insert((item_id.into(), condition), correct);
    }

    pub fn lookup(&self, item_id: &str, condition: Condition) -> Option<bool> {
        self.cells.get(&(item_id.to_string(), condition)).copied()
    }

    pub fn cells(&self) -> impl Iterator<Item = (&(String, Condition), &bool)> {
        self.cells.iter()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<(), SyntheticError> {
        let file = PolicyFile {
            answer_style: self.answer_style,
            seed: self.seed,
            cells: self
                .cells
                .iter()
                .map(|((item_id, condition), correct)| PolicyCell {
                    item_id: item_id.clone(),
                    condition: *condition,
                    correct: *correct,
                })
                .collect(),
        };
        let text = serde_json::to_string_pretty(&file).expect("policy serializes");
        std::fs::write(path, text).map_err(|err| SyntheticError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, SyntheticError> {
        let text = std::fs::read_to_string(path).map_err(|err| SyntheticError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        })?;
        let file: PolicyFile =
            serde_json::from_str(&text).map_err(|err| SyntheticError::Parse {
                path: path.display().to_string(),
                message: err.to_string(),
            })?;
        let mut policy = Self::new(file.answer_style, file.seed);
        for cell in file.cells {
            policy.set(cell.item_id, cell.condition, cell.correct);
        }
        Ok(policy)
    }
}

/// Emit the response for one `(item, condition)` cell. Deterministic per
/// (item, condition, seed): reruns produce byte-identical text.
pub fn synthetic_answer(
    policy: &SyntheticPolicy,
    item: &BenchmarkItem,
    condition: Condition,
) -> Result<ModelResponse, SyntheticError> {
    let correct = policy
        .lookup(&item.id, condition)
        .ok_or_else(|| SyntheticError::UncoveredCell {
            item_id: item.id.clone(),
            condition,
        })?;

    let raw_text = match item.task_type {
        TaskType::Mcq => mcq_answer(policy, item, condition, correct),
        _ => open_ended_answer(item, correct),
    };

    Ok(ModelResponse {
        item_id: item.id.clone(),
        condition,
        model_id: "synthetic".to_string(),
        raw_text,
        latency_ms: 0,
        token_usage: None,
        created_at_ms: 0,
        transport: Transport::Synthetic,
        retries: 0,
    })
}

fn mcq_answer(
    policy: &SyntheticPolicy,
    item: &BenchmarkItem,
    condition: Condition,
    correct: bool,
) -> String {
    let gold = item.gold_index().expect("mcq items carry a gold index");
    let answer_idx = if correct {
        gold
    } else {
        wrong_choice(policy, item, condition, gold)
    };
    let label = BenchmarkItem::choice_label(answer_idx);
    let text = &item.choices[answer_idx];
    match policy.answer_style {
        AnswerStyle::BareLetter => label.to_string(),
        AnswerStyle::Verbose => format!("The answer is ({label}) {text}."),
        AnswerStyle::Garbled => {
            // Mention two choices so unique-containment cannot resolve it.
            let other = wrong_choice(policy, item, condition, answer_idx);
            format!(
                "hard to tell from the clip... it might be {text}, though {} also fits",
                item.choices[other]
            )
        }
    }
}

fn open_ended_answer(item: &BenchmarkItem, correct: bool) -> String {
    if correct {
        item.gold_text().to_string()
    } else {
        "unclear recording, cannot determine the answer".to_string()
    }
}

/// Stable wrong-choice pick: hash of (item, condition, seed) indexes the
/// choices other than `exclude`.
fn wrong_choice(
    policy: &SyntheticPolicy,
    item: &BenchmarkItem,
    condition: Condition,
    exclude: usize,
) -> usize {
    let others: Vec<usize> = (0..item.choices.len()).filter(|&i| i != exclude).collect();
    let digest = sha256_u64(
        format!("{}|{}|{}", item.id, condition.canonical(), policy.seed).as_bytes(),
    );
    others[(digest % others.len() as u64) as usize]
}
