//! audioprobe: audit toolkit for audio-language benchmarks.
//!
//! Measures, for any benchmark in the manifest format and any model
//! reachable over a chat-completions wire protocol, how much of the
//! benchmark is solvable from text alone (text prior) and how much of the
//! audio signal predictions actually depend on (audio reliance). Produces
//! condition accuracies, the text-prior rate R_TP, fragment retention
//! curves R_N, and the five-way per-item decomposition.

pub mod audio;
pub mod batch;
pub mod conditions;
pub mod config;
pub mod dataset;
pub mod diagnostics;
pub mod gateway;
pub mod report;
pub mod runner;
pub mod scorer;
pub mod simulate;
pub mod store;
pub mod util;

pub use conditions::{Condition, ConditionPlan, DecodeParams, PromptBundle, TemplateSet};
pub use config::{BackendKind, RunConfig};
pub use dataset::{load_manifest, BenchmarkItem, ItemSet, TaskType};
pub use diagnostics::{Category, CategoryCounts, CorrectnessGrid};
pub use gateway::{AnswerStyle, ModelEndpoint, ModelResponse, SyntheticPolicy};
pub use report::{AuditReport, GridDocument};
pub use runner::{run_audit, RunLimits, RunOutcome};
pub use scorer::{Verdict, VerdictMethod};
