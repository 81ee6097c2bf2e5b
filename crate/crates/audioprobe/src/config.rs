//! Run configuration: which manifest, which endpoints, which conditions,
//! which backend. Loaded from a JSON file, with CLI flags overriding.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conditions::ConditionPlan;
use crate::gateway::ModelEndpoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Live,
    Replay,
    Synthetic,
}

impl std::str::FromStr for BackendKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(BackendKind::Live),
            "replay" => Ok(BackendKind::Replay),
            "synthetic" => Ok(BackendKind::Synthetic),
            other => Err(ConfigError::Invalid(format!("unknown backend '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Endpoints {
    #[serde(default)]
    pub lalm: Option<ModelEndpoint>,
    #[serde(default)]
    pub text_backbone: Option<ModelEndpoint>,
    #[serde(default)]
    pub judge: Option<ModelEndpoint>,
}

fn default_conditions() -> Vec<String> {
    vec![
        "full".into(),
        "no_audio".into(),
        "text_backbone".into(),
        "fragment".into(),
    ]
}

fn default_fragments() -> BTreeSet<u32> {
    [2, 3, 4, 5].into_iter().collect()
}

fn default_concurrency() -> usize {
    4
}

fn default_max_tokens() -> u32 {
    1024
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub cache_root: PathBuf,
    #[serde(default)]
    pub endpoints: Endpoints,
    /// Enabled condition kinds: any of full, no_audio, text_backbone, fragment.
    #[serde(default = "default_conditions")]
    pub conditions: Vec<String>,
    #[serde(default = "default_fragments")]
    pub fragments: BTreeSet<u32>,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub backend: BackendKind,
    #[serde(default)]
    pub replay_archive: Option<PathBuf>,
    #[serde(default)]
    pub synthetic_policy: Option<PathBuf>,
    /// Model label for replay/synthetic runs without a live endpoint.
    #[serde(default)]
    pub model_id: Option<String>,
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file {path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|err| ConfigError::File {
            path: path.to_path_buf(),
            message: err.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|err| ConfigError::File {
            path: path.to_path_buf(),
            message: err.to_string(),
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.conditions.is_empty() {
            return Err(ConfigError::Invalid("at least one condition kind required".into()));
        }
        for kind in &self.conditions {
            if !["full", "no_audio", "text_backbone", "fragment"].contains(&kind.as_str()) {
                return Err(ConfigError::Invalid(format!("unknown condition kind '{kind}'")));
            }
        }
        if let Some(&n) = self.fragments.iter().find(|&&n| n < 2) {
            return Err(ConfigError::Invalid(format!(
                "fragment count must be at least 2, got {n}"
            )));
        }
        if self.concurrency == 0 {
            return Err(ConfigError::Invalid("concurrency must be at least 1".into()));
        }
        match self.backend {
            BackendKind::Live => {
                if self.endpoints.lalm.is_none() {
                    return Err(ConfigError::Invalid(
                        "live backend requires an lalm endpoint".into(),
                    ));
                }
            }
            BackendKind::Replay => {
                if self.replay_archive.is_none() {
                    return Err(ConfigError::Invalid(
                        "replay backend requires replay_archive".into(),
                    ));
                }
                if self.model_id.is_none() && self.endpoints.lalm.is_none() {
                    return Err(ConfigError::Invalid(
                        "replay backend requires model_id (or an lalm endpoint) to look up records"
                            .into(),
                    ));
                }
            }
            BackendKind::Synthetic => {
                if self.synthetic_policy.is_none() {
                    return Err(ConfigError::Invalid(
                        "synthetic backend requires synthetic_policy".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn condition_plan(&self) -> ConditionPlan {
        let enabled = |kind: &str| self.conditions.iter().any(|c| c == kind);
        ConditionPlan {
            full: enabled("full"),
            no_audio: enabled("no_audio"),
            text_backbone: enabled("text_backbone"),
            fragment_ns: if enabled("fragment") {
                self.fragments.clone()
            } else {
                BTreeSet::new()
            },
        }
    }

    /// The grid's model label: the LALM endpoint's id, or the configured
    /// label for replay/synthetic runs.
    pub fn model_label(&self) -> String {
        if let Some(endpoint) = &self.endpoints.lalm {
            return endpoint.model_id.clone();
        }
        self.model_id.clone().unwrap_or_else(|| "synthetic".into())
    }

    /// A text backbone can answer if an endpoint exists, or trivially on
    /// the replay/synthetic backends.
    pub fn backbone_available(&self) -> bool {
        self.endpoints.text_backbone.is_some() || self.backend != BackendKind::Live
    }

    pub fn output_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| self.cache_root.join("out"))
    }
}
