//! Run orchestration: resume scan, bounded request dispatch, two-stage
//! scoring, and grid assembly.
//!
//! The dispatcher is the only concurrent part of the pipeline. Request
//! tasks run under a per-endpoint concurrency bound and hand completed
//! responses to a single serialized cache writer; scoring and grid
//! assembly then work on immutable snapshots.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;
use tokio::sync::Semaphore;
use tokio::task::JoinSet;

use crate::audio::{
    read_wav, AudioPipelineError, SegmentCache, SegmentIndex, SegmentIndexEntry,
};
use crate::batch;
use crate::conditions::{
    build_request, enumerate_conditions, Condition, ConditionError, DecodeParams, PromptBundle,
    RequestError, TemplateSet,
};
use crate::config::{BackendKind, ConfigError, RunConfig};
use crate::dataset::{load_manifest, BenchmarkItem, ItemSet, ManifestError, TaskType};
use crate::gateway::{
    synthetic_answer, AuditRequest, GatewayError, HttpGateway, ModelEndpoint, ModelResponse,
    ReplayArchive, ReplayError, SyntheticError, SyntheticPolicy,
};
use crate::report::{CellRecord, ExcludedItem, GridDocument};
use crate::scorer::{
    score_mcq_stage, score_open_ended_stage, verdict_from_judge_reply, JudgeRequest, ScoreOutcome,
    Verdict, RULESET_VERSION,
};
use crate::store::{
    resume_scan, CacheKey, LineStore, RunCounts, RunManifest, StoreError,
};
use crate::util::sha256_hex;

#[derive(Debug, Clone, Copy, Default)]
pub struct RunLimits {
    /// Stop dispatching after this many new requests; the run resumes from
    /// cache on the next invocation. Also usable as a budget cap.
    pub max_new_requests: Option<usize>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub run_manifest: RunManifest,
    pub run_manifest_path: PathBuf,
    /// Present only when every (item, condition) pair has a verdict.
    pub grid_document: Option<GridDocument>,
    pub grid_path: Option<PathBuf>,
    pub complete: bool,
    /// Transport failures or judge unavailability occurred; results stand
    /// but are visibly degraded.
    pub degraded: bool,
    pub transport_failures: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Condition(#[from] ConditionError),
    #[error(transparent)]
    Request(#[from] RequestError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Audio(#[from] AudioPipelineError),
    #[error(transparent)]
    Synthetic(#[from] SyntheticError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("template error: {0}")]
    Templates(#[from] std::io::Error),
}

impl RunError {
    pub fn class(&self) -> ErrorClass {
        match self {
            RunError::Config(_) | RunError::Condition(_) => ErrorClass::Config,
            RunError::Gateway(GatewayError::AudioNotSupported { .. })
            | RunError::Gateway(GatewayError::AuthMissing { .. }) => ErrorClass::Config,
            _ => ErrorClass::Data,
        }
    }
}

fn epoch_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Deterministic run identity: manifest content, seed, model label,
/// condition plan, and backend. Paths are deliberately excluded so the
/// same audit in a different directory keeps the same id.
pub fn compute_run_id(config: &RunConfig, manifest_hash: &str, conditions: &[Condition]) -> String {
    let condition_list: Vec<String> = conditions.iter().map(|c| c.canonical()).collect();
    let canonical = format!(
        "{manifest_hash}|{}|{}|{:?}|{}",
        config.seed,
        config.model_label(),
        config.backend,
        condition_list.join(","),
    );
    sha256_hex(canonical.as_bytes())[..12].to_string()
}

enum RunBackend {
    Live(HttpGateway),
    Replay(ReplayArchive),
    Synthetic(SyntheticPolicy),
}

/// Everything needed to compute the cache key of one (item, condition)
/// cell: TB cells route to the backbone model and the text-only template.
struct KeyContext {
    lalm_model: String,
    tb_model: String,
    audio_template_hash: String,
    text_template_hash: String,
    lalm_decode: DecodeParams,
    tb_decode: DecodeParams,
}

impl KeyContext {
    fn model_for(&self, condition: Condition) -> &str {
        match condition {
            Condition::TextBackbone => &self.tb_model,
            _ => &self.lalm_model,
        }
    }

    fn decode_for(&self, condition: Condition) -> &DecodeParams {
        match condition {
            Condition::TextBackbone => &self.tb_decode,
            _ => &self.lalm_decode,
        }
    }

    fn template_hash_for(&self, condition: Condition) -> &str {
        if condition.carries_audio() {
            &self.audio_template_hash
        } else {
            &self.text_template_hash
        }
    }

    fn key(&self, item_id: &str, condition: Condition) -> CacheKey {
        CacheKey::compute(
            self.model_for(condition),
            item_id,
            condition,
            self.template_hash_for(condition),
            self.decode_for(condition),
            RULESET_VERSION,
        )
    }
}

fn endpoint_decode(endpoint: Option<&ModelEndpoint>, max_tokens: u32) -> DecodeParams {
    let temperature = endpoint
        .and_then(|e| e.temperature_override)
        .unwrap_or(0.0);
    DecodeParams {
        temperature,
        max_tokens,
        greedy: temperature == 0.0,
    }
}

/// Why an item was left out of the request sweep and the grid.
fn exclusion_reason(item: &BenchmarkItem, judge_configured: bool) -> Option<&'static str> {
    match item.task_type {
        TaskType::Mcq => None,
        TaskType::OpenEnded if judge_configured => None,
        TaskType::OpenEnded => Some("open_ended_without_judge"),
        TaskType::InstructionFollowing => Some("instruction_following"),
    }
}

type FetchResult = (usize, Condition, CacheKey, Result<ModelResponse, TaskFailure>);

enum TaskFailure {
    Fatal(RunError),
    Transient { message: String },
}

fn classify_gateway_error(err: GatewayError) -> TaskFailure {
    match err {
        GatewayError::AudioNotSupported { .. } | GatewayError::AuthMissing { .. } => {
            TaskFailure::Fatal(RunError::Gateway(err))
        }
        other => TaskFailure::Transient {
            message: other.to_string(),
        },
    }
}

/// Execute a full audit run: resume scan, bounded dispatch, scoring, grid
/// assembly, and manifest finalization.
pub async fn run_audit(config: &RunConfig, limits: &RunLimits) -> Result<RunOutcome, RunError> {
    config.validate()?;
    let started_ms = epoch_ms();

    let items = load_manifest(&config.manifest)?;
    let items = resolve_audio_refs(items);
    let templates = match &config.templates_dir {
        Some(dir) => TemplateSet::load_dir(dir)?,
        None => TemplateSet::builtin(),
    };
    let template_hashes = templates.hashes();
    let plan = config.condition_plan();
    let conditions = enumerate_conditions(&plan, config.backbone_available())?;
    let run_id = compute_run_id(config, &items.content_hash, &conditions);

    let judge_configured = config.endpoints.judge.is_some();
    let mut runnable: Vec<BenchmarkItem> = Vec::new();
    let mut excluded: Vec<ExcludedItem> = Vec::new();
    for item in &items.items {
        match exclusion_reason(item, judge_configured) {
            None => runnable.push(item.clone()),
            Some(reason) => excluded.push(ExcludedItem {
                item_id: item.id.clone(),
                reason: reason.to_string(),
            }),
        }
    }

    let backend = match config.backend {
        BackendKind::Live => RunBackend::Live(HttpGateway::new()),
        BackendKind::Replay => RunBackend::Replay(ReplayArchive::load(
            config.replay_archive.as_ref().expect("validated"),
        )?),
        BackendKind::Synthetic => RunBackend::Synthetic(SyntheticPolicy::load(
            config.synthetic_policy.as_ref().expect("validated"),
        )?),
    };

    // Live fragment requests attach materialized segment files.
    let needs_segments = matches!(config.backend, BackendKind::Live)
        && conditions.iter().any(|c| c.is_fragment());
    let segment_index = if needs_segments {
        SegmentIndex::load(&config.cache_root.join("segments.jsonl"))?
    } else {
        SegmentIndex::new()
    };

    let key_ctx = Arc::new(KeyContext {
        lalm_model: config.model_label(),
        tb_model: config
            .endpoints
            .text_backbone
            .as_ref()
            .map(|e| e.model_id.clone())
            .unwrap_or_else(|| config.model_label()),
        audio_template_hash: template_hashes.user_with_audio.clone(),
        text_template_hash: template_hashes.user_text_only.clone(),
        lalm_decode: endpoint_decode(config.endpoints.lalm.as_ref(), config.max_tokens),
        tb_decode: endpoint_decode(config.endpoints.text_backbone.as_ref(), config.max_tokens),
    });

    let mut responses: LineStore<ModelResponse> =
        LineStore::open(&config.cache_root.join("responses.jsonl"))?;
    let mut verdicts: LineStore<Verdict> =
        LineStore::open(&config.cache_root.join("verdicts.jsonl"))?;

    let runnable_ids: Vec<String> = runnable.iter().map(|i| i.id.clone()).collect();
    let full_work = resume_scan(&runnable_ids, &conditions, &responses, |item_id, cond| {
        key_ctx.key(item_id, cond)
    });
    let total_pairs = runnable_ids.len() * conditions.len();
    let cache_hits = (total_pairs - full_work.len()) as u64;

    let work: Vec<(String, Condition)> = match limits.max_new_requests {
        Some(cap) => full_work.into_iter().take(cap).collect(),
        None => full_work,
    };

    // --- Dispatch: bounded parallelism, single serialized writer. ---
    let mut transport_failures: u64 = 0;
    let mut requests_issued: u64 = 0;
    {
        let runnable = Arc::new(runnable.clone());
        let id_to_idx: BTreeMap<String, usize> = runnable
            .iter()
            .enumerate()
            .map(|(idx, item)| (item.id.clone(), idx))
            .collect();
        let backend = Arc::new(backend);
        let templates = Arc::new(templates.clone());
        let segment_index = Arc::new(segment_index);
        let endpoints = Arc::new(config.endpoints.clone());
        let semaphore = Arc::new(Semaphore::new(config.concurrency));
        let mut tasks: JoinSet<FetchResult> = JoinSet::new();

        for (item_id, condition) in work {
            let idx = id_to_idx[&item_id];
            let key = key_ctx.key(&item_id, condition);
            let runnable = Arc::clone(&runnable);
            let backend = Arc::clone(&backend);
            let templates = Arc::clone(&templates);
            let segment_index = Arc::clone(&segment_index);
            let endpoints = Arc::clone(&endpoints);
            let key_ctx = Arc::clone(&key_ctx);
            let semaphore = Arc::clone(&semaphore);
            tasks.spawn(async move {
                let _permit = semaphore.acquire_owned().await.expect("semaphore open");
                let item = &runnable[idx];
                let result = match &*backend {
                    RunBackend::Synthetic(policy) => synthetic_answer(policy, item, condition)
                        .map_err(|e| TaskFailure::Fatal(RunError::Synthetic(e))),
                    RunBackend::Replay(archive) => archive
                        .lookup(&item.id, condition, key_ctx.model_for(condition))
                        .map_err(|e| TaskFailure::Fatal(RunError::Replay(e))),
                    RunBackend::Live(gateway) => {
                        fetch_live(
                            gateway,
                            item,
                            condition,
                            &templates,
                            &segment_index,
                            &endpoints,
                            &key_ctx,
                        )
                        .await
                    }
                };
                (idx, condition, key, result)
            });
        }

        while let Some(joined) = tasks.join_next().await {
            let (_idx, _condition, key, result) = joined.expect("dispatch task not cancelled");
            requests_issued += 1;
            match result {
                Ok(response) => {
                    responses.put(&key, response, epoch_ms())?;
                }
                Err(TaskFailure::Transient { message }) => {
                    transport_failures += 1;
                    eprintln!("transport failure (degraded): {message}");
                }
                Err(TaskFailure::Fatal(err)) => {
                    tasks.abort_all();
                    return Err(err);
                }
            }
        }
    }
    responses.flush_snapshot()?;

    // --- Scoring: parallel regex stage, then bounded judge calls. ---
    struct Pending {
        idx: usize,
        condition: Condition,
        key: CacheKey,
        raw_text: String,
        task_type: TaskType,
    }

    let mut cells: BTreeMap<(usize, Condition), Verdict> = BTreeMap::new();
    let mut pending: Vec<Pending> = Vec::new();
    let mut complete = true;
    for (idx, item) in runnable.iter().enumerate() {
        for &condition in &conditions {
            let key = key_ctx.key(&item.id, condition);
            let Some(response) = responses.get(&key) else {
                complete = false;
                continue;
            };
            if let Some(verdict) = verdicts.get(&key) {
                cells.insert((idx, condition), verdict.clone());
                continue;
            }
            pending.push(Pending {
                idx,
                condition,
                key,
                raw_text: response.raw_text.clone(),
                task_type: item.task_type,
            });
        }
    }

    enum Staged {
        Final(Verdict),
        Judge(JudgeRequest),
    }

    let staged: Vec<Staged> = {
        let runnable_ref = &runnable;
        batch::map(&pending, |p| {
            let item = &runnable_ref[p.idx];
            match p.task_type {
                TaskType::Mcq => match score_mcq_stage(item, &p.raw_text) {
                    ScoreOutcome::Final(verdict) => Staged::Final(verdict),
                    ScoreOutcome::NeedsJudge(request) => Staged::Judge(request),
                },
                _ => Staged::Judge(score_open_ended_stage(item, &p.raw_text)),
            }
        })
    };

    let mut judge_queue: Vec<(usize, Condition, CacheKey, JudgeRequest)> = Vec::new();
    for (p, outcome) in pending.into_iter().zip(staged) {
        match outcome {
            Staged::Final(verdict) => {
                verdicts.put(&p.key, verdict.clone(), epoch_ms())?;
                cells.insert((p.idx, p.condition), verdict);
            }
            Staged::Judge(request) => judge_queue.push((p.idx, p.condition, p.key, request)),
        }
    }

    let mut judge_calls: u64 = 0;
    let mut judge_unavailable: u64 = 0;
    if !judge_queue.is_empty() {
        match &config.endpoints.judge {
            None => {
                // No judge configured: degraded verdicts, deliberately not
                // cached so a later run with a judge can fill them in.
                for (idx, condition, _key, _request) in judge_queue {
                    judge_unavailable += 1;
                    cells.insert((idx, condition), Verdict::judge_unavailable());
                }
            }
            Some(judge_endpoint) => {
                let gateway = Arc::new(HttpGateway::new());
                let endpoint = Arc::new(judge_endpoint.clone());
                let semaphore = Arc::new(Semaphore::new(config.concurrency));
                let mut tasks: JoinSet<(usize, Condition, CacheKey, Result<String, TaskFailure>)> =
                    JoinSet::new();
                for (idx, condition, key, request) in judge_queue {
                    let gateway = Arc::clone(&gateway);
                    let endpoint = Arc::clone(&endpoint);
                    let semaphore = Arc::clone(&semaphore);
                    let max_tokens = config.max_tokens;
                    tasks.spawn(async move {
                        let _permit = semaphore.acquire_owned().await.expect("semaphore open");
                        let audit = AuditRequest {
                            item_id: format!("judge:{idx}"),
                            condition,
                            bundle: PromptBundle {
                                system_text: request.system_text,
                                user_text: request.user_text,
                                audio_path: None,
                                // The judge always grades greedily.
                                decode: DecodeParams {
                                    temperature: 0.0,
                                    max_tokens,
                                    greedy: true,
                                },
                            },
                        };
                        let result = gateway
                            .query(&endpoint, &audit)
                            .await
                            .map(|response| response.raw_text)
                            .map_err(classify_gateway_error);
                        (idx, condition, key, result)
                    });
                }
                while let Some(joined) = tasks.join_next().await {
                    let (idx, condition, key, result) = joined.expect("judge task not cancelled");
                    match result {
                        Ok(reply) => {
                            judge_calls += 1;
                            let verdict = verdict_from_judge_reply(reply);
                            verdicts.put(&key, verdict.clone(), epoch_ms())?;
                            cells.insert((idx, condition), verdict);
                        }
                        Err(TaskFailure::Transient { message }) => {
                            judge_unavailable += 1;
                            eprintln!("judge unavailable (degraded): {message}");
                            cells.insert((idx, condition), Verdict::judge_unavailable());
                        }
                        Err(TaskFailure::Fatal(err)) => {
                            tasks.abort_all();
                            return Err(err);
                        }
                    }
                }
            }
        }
    }

    verdicts.flush_snapshot()?;

    // --- Grid assembly. ---
    let expected_cells = runnable.len() * conditions.len();
    complete = complete && cells.len() == expected_cells;
    let grid_document = if complete && !runnable.is_empty() {
        let mut records = Vec::with_capacity(cells.len());
        for (idx, item) in runnable.iter().enumerate() {
            for &condition in &conditions {
                let verdict = &cells[&(idx, condition)];
                records.push(CellRecord {
                    item_id: item.id.clone(),
                    condition,
                    correct: verdict.correct,
                    method: verdict.method,
                });
            }
        }
        Some(GridDocument {
            model_id: config.model_label(),
            fragment_ns: plan.fragment_ns.clone(),
            item_ids: runnable_ids.clone(),
            cells: records,
            excluded,
        })
    } else {
        None
    };

    let out_dir = config.output_dir();
    std::fs::create_dir_all(&out_dir)?;
    let grid_path = match &grid_document {
        Some(document) => {
            let path = out_dir.join("grid.jsonl");
            document.save(&path)?;
            Some(path)
        }
        None => None,
    };

    let run_manifest = RunManifest {
        run_id,
        config: serde_json::to_value(config).expect("config serializes"),
        manifest_path: items.source_path.clone(),
        manifest_hash: items.content_hash.clone(),
        template_hashes,
        ruleset_version: RULESET_VERSION.to_string(),
        ruleset_hash: crate::scorer::ruleset_hash(),
        judge_prompt_hash: crate::scorer::judge_prompt_hash(),
        endpoint_ids: endpoint_ids(config),
        started_ms,
        finished_ms: epoch_ms(),
        counts: RunCounts {
            requests_issued,
            cache_hits,
            judge_calls,
            judge_unavailable,
        },
    };
    let run_manifest_path = out_dir.join("run_manifest.json");
    run_manifest.save(&run_manifest_path)?;

    Ok(RunOutcome {
        run_manifest,
        run_manifest_path,
        grid_document,
        grid_path,
        complete,
        degraded: transport_failures > 0 || judge_unavailable > 0,
        transport_failures,
    })
}

async fn fetch_live(
    gateway: &HttpGateway,
    item: &BenchmarkItem,
    condition: Condition,
    templates: &TemplateSet,
    segment_index: &SegmentIndex,
    endpoints: &crate::config::Endpoints,
    key_ctx: &KeyContext,
) -> Result<ModelResponse, TaskFailure> {
    let endpoint = match condition {
        Condition::TextBackbone => endpoints.text_backbone.as_ref(),
        _ => endpoints.lalm.as_ref(),
    }
    .expect("endpoint presence validated");
    let mut bundle = build_request(item, condition, templates, segment_index)
        .map_err(|e| TaskFailure::Fatal(RunError::Request(e)))?;
    bundle.decode = key_ctx.decode_for(condition).clone();
    let request = AuditRequest {
        item_id: item.id.clone(),
        condition,
        bundle,
    };
    gateway
        .query(endpoint, &request)
        .await
        .map_err(classify_gateway_error)
}

fn endpoint_ids(config: &RunConfig) -> Vec<String> {
    let mut ids = Vec::new();
    if let Some(e) = &config.endpoints.lalm {
        ids.push(e.model_id.clone());
    } else {
        ids.push(config.model_label());
    }
    if let Some(e) = &config.endpoints.text_backbone {
        ids.push(e.model_id.clone());
    }
    if let Some(e) = &config.endpoints.judge {
        ids.push(e.model_id.clone());
    }
    ids
}

/// Resolve relative audio references against the manifest's directory.
fn resolve_audio_refs(mut items: ItemSet) -> ItemSet {
    let base = PathBuf::from(&items.source_path)
        .parent()
        .map(|p| p.to_path_buf())
        .unwrap_or_default();
    for item in &mut items.items {
        if let Some(audio_ref) = &item.audio_ref {
            if audio_ref.is_relative() {
                item.audio_ref = Some(base.join(audio_ref));
            }
        }
    }
    items
}

/// Outcome of segmenting one manifest's audio.
#[derive(Debug, Default)]
pub struct SegmentSummary {
    pub clips: usize,
    pub segments_written: usize,
    pub segments_reused: usize,
    pub errors: Vec<String>,
}

/// Materialize every fragment of every referenced clip and write the
/// sidecar index. Idempotent: a second run writes nothing new. Per-clip
/// decode failures are collected, not fatal.
pub fn segment_manifest(
    items: &ItemSet,
    ns: &[u32],
    cache_root: &std::path::Path,
) -> Result<SegmentSummary, RunError> {
    let items_resolved = resolve_audio_refs(items.clone());
    let cache = SegmentCache::new(cache_root);
    std::fs::create_dir_all(cache_root)?;

    let with_audio: Vec<&BenchmarkItem> = items_resolved
        .items
        .iter()
        .filter(|item| item.audio_ref.is_some())
        .collect();

    type ClipResult = Result<(Vec<SegmentIndexEntry>, usize, usize), String>;
    let results: Vec<ClipResult> = batch::map(&with_audio, |item| {
        let source = item.audio_ref.as_ref().expect("filtered on audio_ref");
        let clip = read_wav(source).map_err(|e| format!("{}: {e}", source.display()))?;
        let (entries, stats) = cache
            .materialize(source, &clip, ns)
            .map_err(|e| e.to_string())?;
        let index_entries = entries
            .into_iter()
            .map(|(spec, path)| SegmentIndexEntry {
                item_id: item.id.clone(),
                n: spec.n,
                k: spec.k,
                path,
                source: source.clone(),
                start_frame: spec.start_frame,
                end_frame: spec.end_frame,
            })
            .collect();
        Ok((index_entries, stats.written, stats.reused))
    });

    let mut summary = SegmentSummary::default();
    let mut index = SegmentIndex::new();
    for result in results {
        match result {
            Ok((entries, written, reused)) => {
                summary.clips += 1;
                summary.segments_written += written;
                summary.segments_reused += reused;
                for entry in entries {
                    index.insert(entry);
                }
            }
            Err(message) => summary.errors.push(message),
        }
    }
    index.save(&cache_root.join("segments.jsonl"))?;
    Ok(summary)
}
