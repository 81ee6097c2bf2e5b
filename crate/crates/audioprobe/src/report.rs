//! Grid files and audit reports.
//!
//! A grid document is the cmd_run output: one header line plus one line
//! per (item, condition) cell, carrying the verdict method so reports can
//! tally degraded cells. The audit report aggregates every diagnostic
//! quantity and serializes to a structured line-record file, human-readable
//! tables, and a plot-ready retention series.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::conditions::{Condition, TemplateHashes};
use crate::dataset::{chance_accuracy_of, BenchmarkItem, ItemSet};
use crate::diagnostics::{
    accuracy, decompose_item, decomposition_counts, decomposition_counts_at, domain_breakdown,
    retention_rate, text_prior_rate, Category, CategoryCounts, CorrectnessGrid, DiagnosticsError,
    DomainRow,
};
use crate::scorer::VerdictMethod;
use crate::store::RunManifest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub item_id: String,
    pub condition: Condition,
    pub correct: bool,
    pub method: VerdictMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedItem {
    pub item_id: String,
    pub reason: String,
}

/// Serialized correctness grid plus verdict methods and exclusions.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDocument {
    pub model_id: String,
    pub fragment_ns: BTreeSet<u32>,
    pub item_ids: Vec<String>,
    pub cells: Vec<CellRecord>,
    pub excluded: Vec<ExcludedItem>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GridHeader {
    record: String,
    model_id: String,
    fragment_ns: Vec<u32>,
    item_ids: Vec<String>,
    excluded: Vec<ExcludedItem>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GridCellLine {
    record: String,
    #[serde(flatten)]
    cell: CellRecord,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("grid file {path} line {line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
}

impl GridDocument {
    pub fn save(&self, path: &Path) -> Result<(), std::io::Error> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut out = String::new();
        let header = GridHeader {
            record: "header".into(),
            model_id: self.model_id.clone(),
            fragment_ns: self.fragment_ns.iter().copied().collect(),
            item_ids: self.item_ids.clone(),
            excluded: self.excluded.clone(),
        };
        out.push_str(&serde_json::to_string(&header).expect("header serializes"));
        out.push('\n');
        for cell in &self.cells {
            let line = GridCellLine {
                record: "cell".into(),
                cell: cell.clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("cell serializes"));
            out.push('\n');
        }
        fs::write(path, out)
    }

    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let text = fs::read_to_string(path).map_err(|source| ReportError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut lines = text.lines().enumerate();
        let (_, header_line) = lines.next().ok_or_else(|| ReportError::Malformed {
            path: path.to_path_buf(),
            line: 1,
            message: "empty grid file".into(),
        })?;
        let header: GridHeader =
            serde_json::from_str(header_line).map_err(|err| ReportError::Malformed {
                path: path.to_path_buf(),
                line: 1,
                message: err.to_string(),
            })?;
        let mut cells = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: GridCellLine =
                serde_json::from_str(line).map_err(|err| ReportError::Malformed {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    message: err.to_string(),
                })?;
            cells.push(parsed.cell);
        }
        Ok(Self {
            model_id: header.model_id,
            fragment_ns: header.fragment_ns.into_iter().collect(),
            item_ids: header.item_ids,
            cells,
            excluded: header.excluded,
        })
    }

    /// Validate into the diagnostics grid.
    pub fn to_grid(&self) -> Result<CorrectnessGrid, DiagnosticsError> {
        let mut cells = BTreeMap::new();
        for cell in &self.cells {
            cells.insert((cell.item_id.clone(), cell.condition), cell.correct);
        }
        CorrectnessGrid::from_cells(
            self.model_id.clone(),
            self.item_ids.clone(),
            cells,
            self.fragment_ns.clone(),
        )
    }

    pub fn judge_unavailable_count(&self) -> u64 {
        self.method_counts().judge_unavailable
    }

    /// How cells were scored: the regex/judge mix is the run's own
    /// scorer-agreement surface (the judge is only consulted where
    /// extraction failed, so the two never double-score one response).
    pub fn method_counts(&self) -> MethodCounts {
        let mut counts = MethodCounts::default();
        for cell in &self.cells {
            match cell.method {
                VerdictMethod::Regex => counts.regex += 1,
                VerdictMethod::Judge => counts.judge += 1,
                VerdictMethod::JudgeUnavailable => counts.judge_unavailable += 1,
            }
        }
        counts
    }
}

/// Per-method cell tallies for one grid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodCounts {
    pub regex: u64,
    pub judge: u64,
    pub judge_unavailable: u64,
}

/// Report provenance: which scorer, templates, and manifest produced the
/// numbers. Deliberately path-free so reports are machine-independent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub run_id: String,
    pub manifest_hash: String,
    pub template_hashes: TemplateHashes,
    pub ruleset_version: String,
    pub ruleset_hash: String,
    pub judge_prompt_hash: String,
    /// Prompt templates and extraction rules are tool-defined, not taken
    /// from any benchmark; reports carry this note verbatim.
    pub note: String,
}

const PROVENANCE_NOTE: &str =
    "prompt templates and extraction rules are tool-defined, not benchmark-official";

impl Provenance {
    pub fn from_run_manifest(manifest: &RunManifest) -> Self {
        Self {
            run_id: manifest.run_id.clone(),
            manifest_hash: manifest.manifest_hash.clone(),
            template_hashes: manifest.template_hashes.clone(),
            ruleset_version: manifest.ruleset_version.clone(),
            ruleset_hash: manifest.ruleset_hash.clone(),
            judge_prompt_hash: manifest.judge_prompt_hash.clone(),
            note: PROVENANCE_NOTE.to_string(),
        }
    }
}

/// Aggregate diagnostics for one model on one benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub model_id: String,
    pub item_count: usize,
    pub excluded_count: usize,
    pub acc_full: f64,
    pub acc_none: f64,
    pub acc_tb: Option<f64>,
    pub chance: Option<f64>,
    /// Acc_none / Acc_full; absent (undefined) when Acc_full is zero.
    pub r_tp: Option<f64>,
    pub tb_delta: Option<f64>,
    /// R_N per evaluated n; absent entries mean undefined, never zero.
    pub retention: BTreeMap<u32, Option<f64>>,
    pub categories: CategoryCounts,
    pub per_n_categories: BTreeMap<u32, CategoryCounts>,
    pub xs_share_of_audio_needed: Option<f64>,
    /// Scorer mix across cells: regex-extracted vs judge-graded vs
    /// degraded-unavailable.
    pub method_counts: MethodCounts,
    pub judge_unavailable: u64,
    pub domain: Vec<DomainRow>,
    pub provenance: Provenance,
}

impl AuditReport {
    pub fn compute(
        document: &GridDocument,
        items: &ItemSet,
        provenance: Provenance,
    ) -> Result<Self, ReportError> {
        let grid = document.to_grid()?;
        let acc_full = accuracy(&grid, Condition::Full)?;
        let acc_none = accuracy(&grid, Condition::NoAudio)?;
        let acc_tb = if grid.has_text_backbone() {
            Some(accuracy(&grid, Condition::TextBackbone)?)
        } else {
            None
        };
        let r_tp = text_prior_rate(&grid)?;

        let by_id: BTreeMap<&str, &BenchmarkItem> =
            items.items.iter().map(|item| (item.id.as_str(), item)).collect();
        let grid_items: Vec<BenchmarkItem> = grid
            .item_ids()
            .iter()
            .filter_map(|id| by_id.get(id.as_str()).map(|item| (*item).clone()))
            .collect();
        let mcq_items: Vec<BenchmarkItem> =
            grid_items.iter().filter(|i| i.is_mcq()).cloned().collect();
        let chance = if mcq_items.is_empty() {
            None
        } else {
            Some(chance_accuracy_of(&mcq_items).expect("mcq subset is all-mcq"))
        };

        let mut retention = BTreeMap::new();
        let mut per_n_categories = BTreeMap::new();
        for &n in grid.fragment_ns() {
            let value = match retention_rate(&grid, n) {
                Ok(r) => Some(r),
                Err(DiagnosticsError::ZeroFullAccuracy) => None,
                Err(other) => return Err(other.into()),
            };
            retention.insert(n, value);
            per_n_categories.insert(n, decomposition_counts_at(&grid, n)?);
        }

        let categories = decomposition_counts(&grid)?;
        let domain = domain_breakdown(&grid, &grid_items);

        Ok(Self {
            model_id: grid.model_id().to_string(),
            item_count: grid.len(),
            excluded_count: document.excluded.len(),
            acc_full,
            acc_none,
            acc_tb,
            chance,
            r_tp,
            tb_delta: match (acc_tb, chance) {
                (Some(tb), Some(chance)) => Some(crate::diagnostics::tb_delta(tb, chance)),
                _ => None,
            },
            retention,
            categories,
            per_n_categories,
            xs_share_of_audio_needed: categories.xs_share_of_audio_needed(),
            method_counts: document.method_counts(),
            judge_unavailable: document.judge_unavailable_count(),
            domain,
            provenance,
        })
    }

    /// Structured line records, one JSON value per line.
    pub fn to_records(&self) -> Vec<serde_json::Value> {
        let mut records = Vec::new();
        records.push(json!({
            "record": "provenance",
            "run_id": self.provenance.run_id,
            "manifest_hash": self.provenance.manifest_hash,
            "ruleset_version": self.provenance.ruleset_version,
            "ruleset_hash": self.provenance.ruleset_hash,
            "judge_prompt_hash": self.provenance.judge_prompt_hash,
            "template_hashes": self.provenance.template_hashes,
            "note": self.provenance.note,
        }));
        records.push(json!({
            "record": "summary",
            "model_id": self.model_id,
            "items": self.item_count,
            "excluded": self.excluded_count,
            "acc_full": self.acc_full,
            "acc_none": self.acc_none,
            "acc_tb": self.acc_tb,
            "chance": self.chance,
            "r_tp": self.r_tp,
            "tb_delta": self.tb_delta,
            "scored_by_regex": self.method_counts.regex,
            "scored_by_judge": self.method_counts.judge,
            "judge_unavailable": self.judge_unavailable,
        }));
        for (n, value) in &self.retention {
            records.push(json!({"record": "retention", "n": n, "r_n": value}));
        }
        records.push(json!({
            "record": "categories",
            "ts": self.categories.ts,
            "fs": self.categories.fs,
            "xs": self.categories.xs,
            "ah": self.categories.ah,
            "un": self.categories.un,
            "audio_needed": self.categories.audio_needed(),
            "xs_share_of_audio_needed": self.xs_share_of_audio_needed,
        }));
        for (n, counts) in &self.per_n_categories {
            records.push(json!({
                "record": "categories_at_n",
                "n": n,
                "ts": counts.ts,
                "fs": counts.fs,
                "xs": counts.xs,
                "ah": counts.ah,
                "un": counts.un,
            }));
        }
        for row in &self.domain {
            records.push(json!({
                "record": "domain",
                "category": row.category,
                "items": row.items,
                "acc_full": row.acc_full,
                "acc_none": row.acc_none,
                "gap": row.gap,
                "retention_min_n": row.retention_min_n,
            }));
        }
        records
    }

    /// Human-readable tables mirroring the usual report shapes: text-prior
    /// accuracies, retention trend, category decomposition, domain table.
    pub fn render_tables(&self) -> String {
        fn f3(value: f64) -> String {
            format!("{value:.3}")
        }
        fn opt3(value: Option<f64>) -> String {
            value.map(f3).unwrap_or_else(|| "n/a".into())
        }

        let mut out = String::new();
        writeln!(out, "audit report for model '{}'", self.model_id).unwrap();
        writeln!(
            out,
            "items: {}   excluded: {}   judge-unavailable cells: {}",
            self.item_count, self.excluded_count, self.judge_unavailable
        )
        .unwrap();
        writeln!(
            out,
            "scorer mix: {} cell(s) regex-extracted, {} judge-graded",
            self.method_counts.regex, self.method_counts.judge
        )
        .unwrap();
        writeln!(out).unwrap();

        writeln!(out, "== Text prior ==").unwrap();
        writeln!(
            out,
            "{:<24} {:>8} {:>8} {:>8} {:>8} {:>8} {:>9}",
            "model", "full", "none", "tb", "r_tp", "chance", "tb_delta"
        )
        .unwrap();
        writeln!(
            out,
            "{:<24} {:>8} {:>8} {:>8} {:>8} {:>8} {:>9}",
            self.model_id,
            f3(self.acc_full),
            f3(self.acc_none),
            opt3(self.acc_tb),
            opt3(self.r_tp),
            opt3(self.chance),
            opt3(self.tb_delta),
        )
        .unwrap();
        writeln!(out).unwrap();

        writeln!(out, "== Retention (R_N, one fragment of 1/N duration) ==").unwrap();
        writeln!(out, "{:>4} {:>8}", "n", "r_n").unwrap();
        for (n, value) in &self.retention {
            writeln!(out, "{:>4} {:>8}", n, opt3(*value)).unwrap();
        }
        if self.retention.is_empty() {
            writeln!(out, "(no fragment conditions evaluated)").unwrap();
        }
        writeln!(out).unwrap();

        writeln!(out, "== Item decomposition ==").unwrap();
        writeln!(out, "{:>10} {:>7} {:>8}", "category", "count", "share").unwrap();
        let total = self.categories.total().max(1);
        for category in [Category::TS, Category::FS, Category::XS, Category::AH, Category::UN] {
            let count = self.categories.get(category);
            writeln!(
                out,
                "{:>10} {:>7} {:>8}",
                category.to_string(),
                count,
                f3(count as f64 / total as f64)
            )
            .unwrap();
        }
        writeln!(
            out,
            "audio-needed (FS+XS): {}   XS share of audio-needed: {}",
            self.categories.audio_needed(),
            opt3(self.xs_share_of_audio_needed)
        )
        .unwrap();
        writeln!(out).unwrap();

        writeln!(out, "== Domain breakdown (Full-None gap) ==").unwrap();
        let min_n = self.retention.keys().next().copied();
        let retention_header = match min_n {
            Some(n) => format!("r@n={n}"),
            None => "r@n".into(),
        };
        writeln!(
            out,
            "{:<16} {:>7} {:>8} {:>8} {:>8} {:>8}",
            "category", "items", "full", "none", "gap", retention_header
        )
        .unwrap();
        for row in &self.domain {
            writeln!(
                out,
                "{:<16} {:>7} {:>8} {:>8} {:>8} {:>8}",
                row.category,
                row.items,
                f3(row.acc_full),
                f3(row.acc_none),
                f3(row.gap),
                opt3(row.retention_min_n),
            )
            .unwrap();
        }
        writeln!(out).unwrap();

        writeln!(
            out,
            "provenance: run {}  manifest {}  scorer {}  ({})",
            self.provenance.run_id,
            &self.provenance.manifest_hash[..12.min(self.provenance.manifest_hash.len())],
            self.provenance.ruleset_version,
            self.provenance.note,
        )
        .unwrap();
        out
    }

    /// Plot-ready retention series: `n,r_n` per line, empty cell when
    /// undefined.
    pub fn retention_series_csv(&self) -> String {
        let mut out = String::from("n,r_n\n");
        for (n, value) in &self.retention {
            match value {
                Some(r) => writeln!(out, "{n},{r}").unwrap(),
                None => writeln!(out, "{n},").unwrap(),
            }
        }
        out
    }
}

/// Paths of the emitted report files.
#[derive(Debug, Clone)]
pub struct ReportPaths {
    pub records: PathBuf,
    pub tables: PathBuf,
    pub retention_series: PathBuf,
}

/// Write the structured records (including per-item category lines with
/// round-tripped opaque metadata), the human-readable tables, and the
/// retention plot series.
pub fn write_report_files(
    report: &AuditReport,
    document: &GridDocument,
    items: &ItemSet,
    out_dir: &Path,
) -> Result<ReportPaths, ReportError> {
    fs::create_dir_all(out_dir).map_err(|source| ReportError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let grid = document.to_grid()?;
    let by_id: BTreeMap<&str, &BenchmarkItem> =
        items.items.iter().map(|item| (item.id.as_str(), item)).collect();

    let mut lines = String::new();
    for record in report.to_records() {
        lines.push_str(&record.to_string());
        lines.push('\n');
    }
    for id in grid.item_ids() {
        let category = decompose_item(&grid, id)?;
        let extra = by_id
            .get(id.as_str())
            .map(|item| item.extra.clone())
            .unwrap_or_default();
        let record = json!({
            "record": "item",
            "id": id,
            "category": category.to_string(),
            "extra": extra,
        });
        lines.push_str(&record.to_string());
        lines.push('\n');
    }
    for excluded in &document.excluded {
        let record = json!({
            "record": "excluded_item",
            "id": excluded.item_id,
            "reason": excluded.reason,
        });
        lines.push_str(&record.to_string());
        lines.push('\n');
    }

    let paths = ReportPaths {
        records: out_dir.join("report.jsonl"),
        tables: out_dir.join("report.txt"),
        retention_series: out_dir.join("retention_series.csv"),
    };
    let io_err = |path: &Path, source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    };
    fs::write(&paths.records, lines).map_err(|e| io_err(&paths.records, e))?;
    fs::write(&paths.tables, report.render_tables()).map_err(|e| io_err(&paths.tables, e))?;
    fs::write(&paths.retention_series, report.retention_series_csv())
        .map_err(|e| io_err(&paths.retention_series, e))?;
    Ok(paths)
}
