//! Replay backend: serves previously recorded responses byte-exact, so a
//! cached run can be re-scored or re-reported without any network.

use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::conditions::Condition;

use super::{ModelResponse, Transport};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("archive {path} line {line} is not a response record")]
    Corrupt { path: String, line: usize },
    #[error("no recorded response for ({item_id}, {condition}, {model_id})")]
    ReplayMiss {
        item_id: String,
        condition: Condition,
        model_id: String,
    },
}

/// In-memory index of a line-delimited response archive.
#[derive(Debug, Clone, Default)]
pub struct ReplayArchive {
    responses: HashMap<(String, Condition, String), ModelResponse>,
}

/// Cache files wrap each response in `{key, payload, ...}`; plain archives
/// hold bare `ModelResponse` lines. The loader accepts both, so a run's
/// response cache doubles as a replay archive.
#[derive(Deserialize)]
struct CacheWrapper {
    payload: ModelResponse,
}

impl ReplayArchive {
    pub fn load(path: &Path) -> Result<Self, ReplayError> {
        let text = std::fs::read_to_string(path).map_err(|err| ReplayError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        })?;
        let mut archive = Self::default();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let response = serde_json::from_str::<ModelResponse>(line)
                .or_else(|_| serde_json::from_str::<CacheWrapper>(line).map(|w| w.payload))
                .map_err(|_| ReplayError::Corrupt {
                    path: path.display().to_string(),
                    line: idx + 1,
                })?;
            archive.insert(response);
        }
        Ok(archive)
    }

    pub fn insert(&mut self, response: ModelResponse) {
        self.responses.insert(
            (
                response.item_id.clone(),
                response.condition,
                response.model_id.clone(),
            ),
            response,
        );
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    /// The recorded response with `raw_text` untouched and the transport
    /// marked as replay.
    pub fn lookup(
        &self,
        item_id: &str,
        condition: Condition,
        model_id: &str,
    ) -> Result<ModelResponse, ReplayError> {
        let mut response = self
            .responses
            .get(&(item_id.to_string(), condition, model_id.to_string()))
            .cloned()
            .ok_or_else(|| ReplayError::ReplayMiss {
                item_id: item_id.to_string(),
                condition,
                model_id: model_id.to_string(),
            })?;
        response.transport = Transport::Replay;
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn response(item_id: &str, condition: Condition, raw: &str) -> ModelResponse {
        ModelResponse {
            item_id: item_id.into(),
            condition,
            model_id: "lalm-1".into(),
            raw_text: raw.into(),
            latency_ms: 12,
            token_usage: None,
            created_at_ms: 1700000000000,
            transport: Transport::Live,
            retries: 0,
        }
    }

    #[test]
    fn recorded_responses_replay_byte_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("archive.jsonl");
        let mut file = std::fs::File::create(&path).unwrap();
        let rec = response("q1", Condition::Full, "The answer is (B) piano.");
        writeln!(file, "{}", serde_json::to_string(&rec).unwrap()).unwrap();
        drop(file);

        let archive = ReplayArchive::load(&path).unwrap();
        let replayed = archive.lookup("q1", Condition::Full, "lalm-1").unwrap();
        assert_eq!(replayed.raw_text, rec.raw_text);
        assert_eq!(replayed.transport, Transport::Replay);
    }

    #[test]
    fn unrecorded_pair_is_a_miss() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("archive.jsonl");
        std::fs::write(
            &path,
            format!(
                "{}\n",
                serde_json::to_string(&response("q1", Condition::Full, "B")).unwrap()
            ),
        )
        .unwrap();
        let archive = ReplayArchive::load(&path).unwrap();
        let err = archive
            .lookup("q1", Condition::Fragment { n: 5, k: 4 }, "lalm-1")
            .unwrap_err();
        assert!(matches!(err, ReplayError::ReplayMiss { .. }));
    }

    #[test]
    fn cache_wrapped_lines_are_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("responses.jsonl");
        let rec = response("q2", Condition::NoAudio, "C");
        let wrapped = serde_json::json!({
            "key": "abc",
            "payload": rec,
            "payload_hash": "ignored-here",
            "timestamp_ms": 1,
        });
        std::fs::write(&path, format!("{wrapped}\n")).unwrap();
        let archive = ReplayArchive::load(&path).unwrap();
        assert_eq!(
            archive.lookup("q2", Condition::NoAudio, "lalm-1").unwrap().raw_text,
            "C"
        );
    }

    #[test]
    fn corrupt_lines_are_reported_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("archive.jsonl");
        std::fs::write(&path, "junk line\n").unwrap();
        match ReplayArchive::load(&path) {
            Err(ReplayError::Corrupt { line: 1, .. }) => {}
            other => panic!("expected Corrupt at line 1, got {other:?}"),
        }
    }
}
