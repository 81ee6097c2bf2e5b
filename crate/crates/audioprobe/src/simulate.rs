//! Self-contained planted fixtures: a small manifest with real WAV clips,
//! a synthetic policy covering every condition, and a ready-to-run config.
//! Used for smoke tests and the acceptance suite; no network, no external
//! data.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde_json::json;
use thiserror::Error;

use crate::audio::{write_wav, AudioClip, WavError};
use crate::conditions::Condition;
use crate::config::{BackendKind, Endpoints, RunConfig};
use crate::gateway::{AnswerStyle, SyntheticError, SyntheticPolicy};

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error(transparent)]
    Policy(#[from] SyntheticError),
}

/// Paths of a generated fixture.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub manifest: PathBuf,
    pub policy: PathBuf,
    pub config: PathBuf,
    pub audio_dir: PathBuf,
    pub item_count: usize,
}

const CATEGORIES: [&str; 3] = ["speech", "sound", "music"];
const CHOICES: [&str; 4] = ["alpha tone", "bravo tone", "charlie tone", "delta tone"];

/// Planted correctness for one (item index, condition) cell.
///
/// The pattern cycles items through the five decomposition categories:
/// index 0 mod 5 → TS, 1 → FS (first n=2 fragment correct), 2 → XS,
/// 3 → AH, 4 → UN. The text backbone answers items with even index.
pub fn planted_cell(item_idx: usize, condition: Condition) -> bool {
    let role = item_idx % 5;
    match condition {
        Condition::Full => matches!(role, 0..=2),
        Condition::NoAudio => matches!(role, 0 | 3),
        Condition::TextBackbone => item_idx.is_multiple_of(2),
        Condition::Fragment { n, k } => role == 1 && n == 2 && k == 0,
    }
}

/// Generate a fixture under `out_dir`: WAV clips, manifest, planted
/// policy, and a synthetic-backend run config.
pub fn generate(
    out_dir: &Path,
    item_count: usize,
    style: AnswerStyle,
    seed: u64,
    fragment_ns: &BTreeSet<u32>,
) -> Result<Fixture, SimulateError> {
    let audio_dir = out_dir.join("audio");
    std::fs::create_dir_all(&audio_dir).map_err(|source| SimulateError::Io {
        path: audio_dir.clone(),
        source,
    })?;

    let mut manifest_lines = String::new();
    let mut policy = SyntheticPolicy::new(style, seed);
    for idx in 0..item_count {
        let id = format!("item_{idx:03}");
        let clip = deterministic_clip(idx, seed);
        let wav_name = format!("{id}.wav");
        write_wav(&audio_dir.join(&wav_name), &clip)?;

        let record = json!({
            "id": id,
            "benchmark": "simulated",
            "task_type": "mcq",
            "question": format!("Which tone family does clip {idx} belong to?"),
            "choices": CHOICES,
            "gold": idx % CHOICES.len(),
            "audio_ref": format!("audio/{wav_name}"),
            "category": CATEGORIES[idx % CATEGORIES.len()],
            "planted_role": idx % 5,
        });
        manifest_lines.push_str(&record.to_string());
        manifest_lines.push('\n');

        let mut conditions = vec![Condition::Full, Condition::NoAudio, Condition::TextBackbone];
        for &n in fragment_ns {
            for k in 0..n {
                conditions.push(Condition::Fragment { n, k });
            }
        }
        for condition in conditions {
            policy.set(id.clone(), condition, planted_cell(idx, condition));
        }
    }

    let manifest = out_dir.join("manifest.jsonl");
    std::fs::write(&manifest, manifest_lines).map_err(|source| SimulateError::Io {
        path: manifest.clone(),
        source,
    })?;

    let policy_path = out_dir.join("policy.json");
    policy.save(&policy_path)?;

    let config = RunConfig {
        manifest: manifest.clone(),
        cache_root: out_dir.join("cache"),
        endpoints: Endpoints::default(),
        conditions: vec![
            "full".into(),
            "no_audio".into(),
            "text_backbone".into(),
            "fragment".into(),
        ],
        fragments: fragment_ns.clone(),
        concurrency: 4,
        backend: BackendKind::Synthetic,
        replay_archive: None,
        synthetic_policy: Some(policy_path.clone()),
        model_id: Some("synthetic".into()),
        templates_dir: None,
        seed,
        out_dir: Some(out_dir.join("out")),
        max_tokens: 64,
    };
    let config_path = out_dir.join("config.json");
    let config_text = serde_json::to_string_pretty(&config).expect("config serializes");
    std::fs::write(&config_path, config_text).map_err(|source| SimulateError::Io {
        path: config_path.clone(),
        source,
    })?;

    Ok(Fixture {
        manifest,
        policy: policy_path,
        config: config_path,
        audio_dir,
        item_count,
    })
}

/// A short mono clip whose samples are a pure function of (index, seed).
/// Lengths vary so fragment boundaries hit uneven splits.
fn deterministic_clip(idx: usize, seed: u64) -> AudioClip {
    let frames = 400 + (idx % 7) * 37;
    let phase = (seed as usize).wrapping_add(idx * 131);
    let samples: Vec<i16> = (0..frames)
        .map(|i| {
            let raw = (i.wrapping_mul(2971).wrapping_add(phase * 7919)) % 20001;
            (raw as i32 - 10000) as i16
        })
        .collect();
    AudioClip::new(8_000, 1, samples).expect("generated clip is valid")
}
