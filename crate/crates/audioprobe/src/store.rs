//! Content-addressed, resumable persistence: response cache, verdict
//! cache, and run manifests.
//!
//! Storage is append-only line records (`{key, payload, payload_hash,
//! timestamp_ms}` per line). A single writer owns each file; readers work
//! on loaded snapshots. Nothing is ever rewritten in place.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conditions::{Condition, DecodeParams, TemplateHashes};
use crate::util::sha256_hex;

/// Digest identifying one model call: any input change produces a new key
/// and forces a fresh query.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CacheKey(pub String);

impl CacheKey {
    pub fn compute(
        model_id: &str,
        item_id: &str,
        condition: Condition,
        template_hash: &str,
        decode: &DecodeParams,
        ruleset_version: &str,
    ) -> Self {
        let canonical = format!(
            "{model_id}\n{item_id}\n{}\n{template_hash}\n{}\n{ruleset_version}",
            condition.canonical(),
            decode.canonical(),
        );
        CacheKey(sha256_hex(canonical.as_bytes()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt record at line {line} of {path}")]
    CorruptRecord { path: PathBuf, line: usize },
    #[error("conflicting payloads for key {key}")]
    ConflictingPayload { key: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct LineRecord<T> {
    key: String,
    payload: T,
    payload_hash: String,
    timestamp_ms: u64,
}

fn payload_hash<T: Serialize>(payload: &T) -> String {
    sha256_hex(
        serde_json::to_string(payload)
            .expect("payload serializes")
            .as_bytes(),
    )
}

/// Whether a `put` appended a new record or found it already stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutOutcome {
    Inserted,
    AlreadyPresent,
}

/// How often `put` refreshes the on-disk index snapshot.
const SNAPSHOT_INTERVAL: usize = 512;

/// Durable key → payload-hash index written alongside the line file.
/// Lets readers list keys cheaply and catches a line file that lost
/// records the index already saw.
#[derive(Debug, Serialize, Deserialize)]
struct IndexSnapshot {
    record_count: usize,
    keys: BTreeMap<String, String>,
}

/// Append-only key → payload store, one JSON record per line, plus a
/// periodic index snapshot at `<path>.index`.
#[derive(Debug)]
pub struct LineStore<T> {
    path: PathBuf,
    entries: BTreeMap<String, (T, String)>,
    file: Option<File>,
    puts_since_snapshot: usize,
}

impl<T: Serialize + DeserializeOwned + Clone> LineStore<T> {
    /// Open (creating parent directories as needed) and load existing
    /// records. Every stored payload hash is re-verified on load, and the
    /// loaded records are cross-checked against the last index snapshot.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| StoreError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        let mut entries = BTreeMap::new();
        if path.exists() {
            let text = fs::read_to_string(path).map_err(|source| StoreError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            for (idx, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let record: LineRecord<T> =
                    serde_json::from_str(line).map_err(|_| StoreError::CorruptRecord {
                        path: path.to_path_buf(),
                        line: idx + 1,
                    })?;
                if payload_hash(&record.payload) != record.payload_hash {
                    return Err(StoreError::CorruptRecord {
                        path: path.to_path_buf(),
                        line: idx + 1,
                    });
                }
                match entries.get(&record.key) {
                    Some((_, existing_hash)) if *existing_hash != record.payload_hash => {
                        return Err(StoreError::ConflictingPayload { key: record.key });
                    }
                    _ => {
                        entries.insert(record.key, (record.payload, record.payload_hash));
                    }
                }
            }
        }

        let snapshot_path = Self::snapshot_path_for(path);
        if snapshot_path.exists() {
            let text = fs::read_to_string(&snapshot_path).map_err(|source| StoreError::Io {
                path: snapshot_path.clone(),
                source,
            })?;
            let snapshot: IndexSnapshot =
                serde_json::from_str(&text).map_err(|_| StoreError::CorruptRecord {
                    path: snapshot_path.clone(),
                    line: 1,
                })?;
            // Every key the snapshot saw must still be present, unchanged.
            // Records appended after the last snapshot are expected.
            for (key, hash) in &snapshot.keys {
                match entries.get(key) {
                    Some((_, existing)) if existing == hash => {}
                    Some(_) => {
                        return Err(StoreError::ConflictingPayload { key: key.clone() })
                    }
                    None => {
                        return Err(StoreError::CorruptRecord {
                            path: path.to_path_buf(),
                            line: 0,
                        })
                    }
                }
            }
        }

        Ok(Self {
            path: path.to_path_buf(),
            entries,
            file: None,
            puts_since_snapshot: 0,
        })
    }

    fn snapshot_path_for(path: &Path) -> PathBuf {
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".index");
        path.with_file_name(name)
    }

    pub fn snapshot_path(&self) -> PathBuf {
        Self::snapshot_path_for(&self.path)
    }

    /// Write the index snapshot now (atomically, via a temp file rename).
    pub fn flush_snapshot(&mut self) -> Result<(), StoreError> {
        let snapshot = IndexSnapshot {
            record_count: self.entries.len(),
            keys: self
                .entries
                .iter()
                .map(|(key, (_, hash))| (key.clone(), hash.clone()))
                .collect(),
        };
        let target = self.snapshot_path();
        let tmp = target.with_extension("index.tmp");
        let text = serde_json::to_string(&snapshot).expect("snapshot serializes");
        fs::write(&tmp, text).map_err(|source| StoreError::Io {
            path: tmp.clone(),
            source,
        })?;
        fs::rename(&tmp, &target).map_err(|source| StoreError::Io {
            path: target,
            source,
        })?;
        self.puts_since_snapshot = 0;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: &CacheKey) -> bool {
        self.entries.contains_key(key.as_str())
    }

    pub fn get(&self, key: &CacheKey) -> Option<&T> {
        self.entries.get(key.as_str()).map(|(payload, _)| payload)
    }

    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.entries.values().map(|(payload, _)| payload)
    }

    /// Append-only, idempotent put. The same key with the same payload is a
    /// no-op; the same key with a different payload is an integrity error.
    pub fn put(&mut self, key: &CacheKey, payload: T, timestamp_ms: u64) -> Result<PutOutcome, StoreError> {
        let hash = payload_hash(&payload);
        if let Some((_, existing_hash)) = self.entries.get(key.as_str()) {
            if *existing_hash == hash {
                return Ok(PutOutcome::AlreadyPresent);
            }
            return Err(StoreError::ConflictingPayload {
                key: key.as_str().to_string(),
            });
        }
        let record = LineRecord {
            key: key.as_str().to_string(),
            payload: payload.clone(),
            payload_hash: hash.clone(),
            timestamp_ms,
        };
        let line = serde_json::to_string(&record).expect("record serializes");
        if self.file.is_none() {
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&self.path)
                .map_err(|source| StoreError::Io {
                    path: self.path.clone(),
                    source,
                })?;
            self.file = Some(file);
        }
        let file = self.file.as_mut().expect("append handle open");
        writeln!(file, "{line}").map_err(|source| StoreError::Io {
            path: self.path.clone(),
            source,
        })?;
        file.flush().map_err(|source| StoreError::Io {
            path: self.path.clone(),
            source,
        })?;
        self.entries.insert(key.as_str().to_string(), (payload, hash));
        self.puts_since_snapshot += 1;
        if self.puts_since_snapshot >= SNAPSHOT_INTERVAL {
            self.flush_snapshot()?;
        }
        Ok(PutOutcome::Inserted)
    }
}

/// Uncached work units: the cross product minus cache hits.
///
/// `work ∪ cached = items × conditions`, so an interrupted run resumes with
/// zero duplicate model calls.
pub fn resume_scan<T, K>(
    item_ids: &[String],
    conditions: &[Condition],
    cache: &LineStore<T>,
    key_fn: K,
) -> Vec<(String, Condition)>
where
    T: Serialize + DeserializeOwned + Clone,
    K: Fn(&str, Condition) -> CacheKey,
{
    let mut work = Vec::new();
    for item_id in item_ids {
        for &condition in conditions {
            if !cache.contains(&key_fn(item_id, condition)) {
                work.push((item_id.clone(), condition));
            }
        }
    }
    work
}

/// Run-level tallies recorded in the manifest.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub requests_issued: u64,
    pub cache_hits: u64,
    pub judge_calls: u64,
    pub judge_unavailable: u64,
}

/// Immutable record of one run: configuration snapshot, asset hashes, and
/// tallies. Every report cites exactly one manifest by `run_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config: serde_json::Value,
    pub manifest_path: String,
    pub manifest_hash: String,
    pub template_hashes: TemplateHashes,
    pub ruleset_version: String,
    pub ruleset_hash: String,
    pub judge_prompt_hash: String,
    pub endpoint_ids: Vec<String>,
    pub started_ms: u64,
    pub finished_ms: u64,
    pub counts: RunCounts,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| StoreError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text).map_err(|source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let text = fs::read_to_string(path).map_err(|source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|_| StoreError::CorruptRecord {
            path: path.to_path_buf(),
            line: 1,
        })
    }
}
