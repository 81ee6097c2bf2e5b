//! Evaluation conditions and request assembly.
//!
//! A condition is the input regime a request runs under: full audio, no
//! audio, the text backbone, or one fragment of an n-way split. Fragment
//! requests reuse the exact user text of the full-audio request; the
//! no-audio/backbone template differs only in that it drops the
//! audio-referential phrasing.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::audio::SegmentIndex;
use crate::dataset::{BenchmarkItem, TaskType};
use crate::util::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Condition {
    Full,
    NoAudio,
    TextBackbone,
    Fragment { n: u32, k: u32 },
}

impl Condition {
    pub fn carries_audio(&self) -> bool {
        matches!(self, Condition::Full | Condition::Fragment { .. })
    }

    pub fn is_fragment(&self) -> bool {
        matches!(self, Condition::Fragment { .. })
    }

    /// Canonical string form, used in cache keys, grid files, and reports.
    pub fn canonical(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Full => f.write_str("full"),
            Condition::NoAudio => f.write_str("no_audio"),
            Condition::TextBackbone => f.write_str("text_backbone"),
            Condition::Fragment { n, k } => write!(f, "fragment:{n}/{k}"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unrecognized condition '{0}'")]
pub struct ParseConditionError(String);

impl FromStr for Condition {
    type Err = ParseConditionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => return Ok(Condition::Full),
            "no_audio" => return Ok(Condition::NoAudio),
            "text_backbone" => return Ok(Condition::TextBackbone),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("fragment:") {
            if let Some((n, k)) = rest.split_once('/') {
                if let (Ok(n), Ok(k)) = (n.parse(), k.parse()) {
                    return Ok(Condition::Fragment { n, k });
                }
            }
        }
        Err(ParseConditionError(s.to_string()))
    }
}

impl Serialize for Condition {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Condition {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// Which condition kinds a run evaluates, and with which fragment counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConditionPlan {
    pub full: bool,
    pub no_audio: bool,
    pub text_backbone: bool,
    pub fragment_ns: BTreeSet<u32>,
}

impl Default for ConditionPlan {
    fn default() -> Self {
        Self {
            full: true,
            no_audio: true,
            text_backbone: true,
            fragment_ns: [2, 3, 4, 5].into_iter().collect(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConditionError {
    #[error("no conditions enabled")]
    EmptyConditionSet,
    #[error("fragment count must be at least 2, got {0}")]
    FragmentCountTooSmall(u32),
}

/// Enumerate the run's conditions in canonical order: full, no_audio,
/// text_backbone (when a backbone can answer), then fragments sorted by
/// (n, k).
pub fn enumerate_conditions(
    plan: &ConditionPlan,
    backbone_available: bool,
) -> Result<Vec<Condition>, ConditionError> {
    if let Some(&n) = plan.fragment_ns.iter().find(|&&n| n < 2) {
        return Err(ConditionError::FragmentCountTooSmall(n));
    }
    let mut out = Vec::new();
    if plan.full {
        out.push(Condition::Full);
    }
    if plan.no_audio {
        out.push(Condition::NoAudio);
    }
    if plan.text_backbone && backbone_available {
        out.push(Condition::TextBackbone);
    }
    for &n in &plan.fragment_ns {
        for k in 0..n {
            out.push(Condition::Fragment { n, k });
        }
    }
    if out.is_empty() {
        return Err(ConditionError::EmptyConditionSet);
    }
    Ok(out)
}

/// Decoding parameters sent with every request. Greedy (temperature 0)
/// unless a per-model override raises the temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub greedy: bool,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 1024,
            greedy: true,
        }
    }
}

impl DecodeParams {
    pub fn with_temperature(temperature: f64) -> Self {
        Self {
            temperature,
            greedy: temperature == 0.0,
            ..Self::default()
        }
    }

    /// Canonical serialization for cache-key hashing.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("decode params serialize")
    }
}

/// Fully assembled model request: prompt text plus optional audio file.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub audio_path: Option<PathBuf>,
    pub decode: DecodeParams,
}

/// The two user templates (with and without audio phrasing) plus the shared
/// system text. Placeholders: `{question}`, `{choices}`, `{format_instruction}`.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub system: String,
    pub user_with_audio: String,
    pub user_text_only: String,
}

/// SHA-256 of each template, recorded in the run manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateHashes {
    pub system: String,
    pub user_with_audio: String,
    pub user_text_only: String,
}

impl TemplateSet {
    /// The templates shipped with the tool. These are project-defined, not
    /// taken from any benchmark, and reports flag them as such.
    pub fn builtin() -> Self {
        Self {
            system: include_str!("../assets/templates/system.txt").to_string(),
            user_with_audio: include_str!("../assets/templates/user_with_audio.txt").to_string(),
            user_text_only: include_str!("../assets/templates/user_text_only.txt").to_string(),
        }
    }

    /// Load `system.txt`, `user_with_audio.txt`, `user_text_only.txt` from a directory.
    pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
        Ok(Self {
            system: std::fs::read_to_string(dir.join("system.txt"))?,
            user_with_audio: std::fs::read_to_string(dir.join("user_with_audio.txt"))?,
            user_text_only: std::fs::read_to_string(dir.join("user_text_only.txt"))?,
        })
    }

    pub fn hashes(&self) -> TemplateHashes {
        TemplateHashes {
            system: sha256_hex(self.system.as_bytes()),
            user_with_audio: sha256_hex(self.user_with_audio.as_bytes()),
            user_text_only: sha256_hex(self.user_text_only.as_bytes()),
        }
    }
}

#[derive(Debug, Error)]
pub enum RequestError {
    #[error("item '{item_id}' has no materialized segment for n={n}, k={k}")]
    MissingSegment { item_id: String, n: u32, k: u32 },
    #[error("item '{item_id}' carries no audio reference")]
    MissingAudio { item_id: String },
    #[error("item '{item_id}' has unsupported task type {task_type}")]
    UnsupportedTaskType { item_id: String, task_type: TaskType },
}

/// Choice block as it appears in prompts: one `X. text` line per choice,
/// labeled A, B, C, ... in manifest order.
pub fn render_choices(choices: &[String]) -> String {
    choices
        .iter()
        .enumerate()
        .map(|(i, text)| format!("{}. {}", BenchmarkItem::choice_label(i), text))
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_template(template: &str, item: &BenchmarkItem) -> String {
    let (choices, format_instruction) = if item.is_mcq() {
        (
            render_choices(&item.choices),
            "Answer with the letter of the correct option.".to_string(),
        )
    } else {
        (String::new(), "Answer concisely.".to_string())
    };
    template
        .replace("{question}", &item.question)
        .replace("{choices}", &choices)
        .replace("{format_instruction}", &format_instruction)
}

/// Assemble the request for one `(item, condition)` pair.
///
/// Pure function of its inputs. Full and fragment requests share
/// byte-identical user text; no-audio and backbone requests use the
/// text-only template. Decode parameters default to greedy; per-model
/// overrides are applied by the caller before dispatch.
pub fn build_request(
    item: &BenchmarkItem,
    condition: Condition,
    templates: &TemplateSet,
    segments: &SegmentIndex,
) -> Result<PromptBundle, RequestError> {
    if item.task_type == TaskType::InstructionFollowing {
        return Err(RequestError::UnsupportedTaskType {
            item_id: item.id.clone(),
            task_type: item.task_type,
        });
    }

    let audio_path = match condition {
        Condition::Full => Some(item.audio_ref.clone().ok_or_else(|| {
            RequestError::MissingAudio {
                item_id: item.id.clone(),
            }
        })?),
        Condition::Fragment { n, k } => {
            let entry =
                segments
                    .lookup(&item.id, n, k)
                    .ok_or_else(|| RequestError::MissingSegment {
                        item_id: item.id.clone(),
                        n,
                        k,
                    })?;
            Some(entry.path.clone())
        }
        Condition::NoAudio | Condition::TextBackbone => None,
    };

    let template = if condition.carries_audio() {
        &templates.user_with_audio
    } else {
        &templates.user_text_only
    };

    Ok(PromptBundle {
        system_text: templates.system.clone(),
        user_text: render_template(template, item),
        audio_path,
        decode: DecodeParams::default(),
    })
}
