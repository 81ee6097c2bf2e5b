//! audioprobe command line: validate manifests, materialize audio
//! segments, run condition sweeps, and emit audit reports.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 run completed but transport-degraded.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use audioprobe::config::{BackendKind, RunConfig};
use audioprobe::dataset::{load_manifest, ManifestError};
use audioprobe::gateway::AnswerStyle;
use audioprobe::report::{write_report_files, AuditReport, GridDocument, Provenance};
use audioprobe::runner::{run_audit, segment_manifest, ErrorClass, RunLimits};
use audioprobe::store::RunManifest;

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_DEGRADED: u8 = 4;

#[derive(Parser)]
#[command(name = "audioprobe", version, about = "Audit audio-language benchmarks for text prior and audio reliance")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a manifest against the item schema.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Split every referenced clip into equal-duration fragments.
    Segment {
        #[arg(long)]
        manifest: PathBuf,
        /// Fragment counts, e.g. 2,3,4,5.
        #[arg(long, value_delimiter = ',', default_values_t = vec![2u32, 3, 4, 5])]
        fragments: Vec<u32>,
        #[arg(long)]
        cache_root: PathBuf,
    },
    /// Query the model under every enabled condition and write the grid.
    Run(RunArgs),
    /// Compute diagnostics from a grid file and emit report files.
    Report {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Run manifest written by `run` (defaults to run_manifest.json
        /// next to the grid).
        #[arg(long)]
        run_manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a planted synthetic fixture for smoke tests.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        items: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// bare_letter, verbose, or garbled.
        #[arg(long, default_value = "bare_letter")]
        style: String,
        #[arg(long, value_delimiter = ',', default_values_t = vec![2u32, 3, 4, 5])]
        fragments: Vec<u32>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON run-configuration file; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    cache_root: Option<PathBuf>,
    /// live, replay, or synthetic.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    replay_archive: Option<PathBuf>,
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Condition kinds, e.g. full,no_audio,text_backbone,fragment.
    #[arg(long, value_delimiter = ',')]
    conditions: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    fragments: Option<Vec<u32>>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stop after this many new model requests (resume later from cache).
    #[arg(long)]
    max_requests: Option<usize>,
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { manifest } => cmd_validate(&manifest),
        Command::Segment {
            manifest,
            fragments,
            cache_root,
        } => cmd_segment(&manifest, &fragments, &cache_root),
        Command::Run(args) => cmd_run(args).await,
        Command::Report {
            grid,
            manifest,
            run_manifest,
            out,
        } => cmd_report(&grid, &manifest, run_manifest.as_deref(), &out),
        Command::Simulate {
            out,
            items,
            seed,
            style,
            fragments,
        } => cmd_simulate(&out, items, seed, &style, &fragments),
    }
}

fn cmd_validate(manifest: &Path) -> ExitCode {
    match load_manifest(manifest) {
        Ok(items) => {
            let mcq = items.mcq_items().count();
            println!(
                "ok: {} item(s), {} mcq, hash {}",
                items.len(),
                mcq,
                &items.content_hash[..12]
            );
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("invalid manifest: {err}");
            let code = match err {
                ManifestError::MissingFile(_) | ManifestError::Io { .. } => EXIT_CONFIG,
                _ => EXIT_DATA,
            };
            ExitCode::from(code)
        }
    }
}

fn cmd_segment(manifest: &Path, fragments: &[u32], cache_root: &Path) -> ExitCode {
    if let Some(&n) = fragments.iter().find(|&&n| n < 2) {
        eprintln!("fragment count must be at least 2, got {n}");
        return ExitCode::from(EXIT_CONFIG);
    }
    let items = match load_manifest(manifest) {
        Ok(items) => items,
        Err(err) => {
            eprintln!("invalid manifest: {err}");
            return ExitCode::from(EXIT_DATA);
        }
    };
    match segment_manifest(&items, fragments, cache_root) {
        Ok(summary) => {
            println!(
                "segmented {} clip(s): {} new file(s), {} reused",
                summary.clips, summary.segments_written, summary.segments_reused
            );
            if summary.errors.is_empty() {
                ExitCode::SUCCESS
            } else {
                for error in &summary.errors {
                    eprintln!("segment error: {error}");
                }
                ExitCode::from(EXIT_DATA)
            }
        }
        Err(err) => {
            eprintln!("segmentation failed: {err}");
            ExitCode::from(EXIT_DATA)
        }
    }
}

fn build_run_config(args: &RunArgs) -> Result<RunConfig, String> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path).map_err(|e| e.to_string())?,
        None => {
            let manifest = args
                .manifest
                .clone()
                .ok_or("either --config or --manifest is required")?;
            let cache_root = args
                .cache_root
                .clone()
                .ok_or("either --config or --cache-root is required")?;
            RunConfig {
                manifest,
                cache_root,
                endpoints: Default::default(),
                conditions: vec![
                    "full".into(),
                    "no_audio".into(),
                    "text_backbone".into(),
                    "fragment".into(),
                ],
                fragments: [2, 3, 4, 5].into_iter().collect(),
                concurrency: 4,
                backend: BackendKind::Live,
                replay_archive: None,
                synthetic_policy: None,
                model_id: None,
                templates_dir: None,
                seed: 0,
                out_dir: None,
                max_tokens: 1024,
            }
        }
    };
    if let Some(manifest) = &args.manifest {
        config.manifest = manifest.clone();
    }
    if let Some(cache_root) = &args.cache_root {
        config.cache_root = cache_root.clone();
    }
    if let Some(backend) = &args.backend {
        config.backend = backend.parse().map_err(|e| format!("{e}"))?;
    }
    if let Some(archive) = &args.replay_archive {
        config.replay_archive = Some(archive.clone());
    }
    if let Some(policy) = &args.policy {
        config.synthetic_policy = Some(policy.clone());
    }
    if let Some(conditions) = &args.conditions {
        config.conditions = conditions.clone();
    }
    if let Some(fragments) = &args.fragments {
        config.fragments = fragments.iter().copied().collect::<BTreeSet<u32>>();
    }
    if let Some(concurrency) = args.concurrency {
        config.concurrency = concurrency;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.out_dir = Some(out.clone());
    }
    Ok(config)
}

async fn cmd_run(args: RunArgs) -> ExitCode {
    let config = match build_run_config(&args) {
        Ok(config) => config,
        Err(message) => {
            eprintln!("configuration error: {message}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let limits = RunLimits {
        max_new_requests: args.max_requests,
    };
    match run_audit(&config, &limits).await {
        Ok(outcome) => {
            let counts = outcome.run_manifest.counts;
            println!(
                "run {}: {} request(s) issued, {} cache hit(s), {} judge call(s), {} judge-unavailable",
                outcome.run_manifest.run_id,
                counts.requests_issued,
                counts.cache_hits,
                counts.judge_calls,
                counts.judge_unavailable
            );
            match &outcome.grid_path {
                Some(path) => println!("grid: {}", path.display()),
                None => println!("grid not written (run incomplete; rerun to resume)"),
            }
            if outcome.degraded {
                eprintln!(
                    "run degraded: {} transport failure(s), {} judge-unavailable",
                    outcome.transport_failures, counts.judge_unavailable
                );
                ExitCode::from(EXIT_DEGRADED)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(err) => {
            eprintln!("run failed: {err}");
            match err.class() {
                ErrorClass::Config => ExitCode::from(EXIT_CONFIG),
                ErrorClass::Data => ExitCode::from(EXIT_DATA),
            }
        }
    }
}

fn cmd_report(
    grid: &Path,
    manifest: &Path,
    run_manifest: Option<&Path>,
    out: &Path,
) -> ExitCode {
    let document = match GridDocument::load(grid) {
        Ok(document) => document,
        Err(err) => {
            eprintln!("cannot load grid: {err}");
            return ExitCode::from(EXIT_DATA);
        }
    };
    let items = match load_manifest(manifest) {
        Ok(items) => items,
        Err(err) => {
            eprintln!("invalid manifest: {err}");
            return ExitCode::from(EXIT_DATA);
        }
    };
    let run_manifest_path = run_manifest
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| grid.parent().unwrap_or(Path::new(".")).join("run_manifest.json"));
    let provenance = match RunManifest::load(&run_manifest_path) {
        Ok(manifest) => Provenance::from_run_manifest(&manifest),
        Err(err) => {
            eprintln!("cannot load run manifest {}: {err}", run_manifest_path.display());
            return ExitCode::from(EXIT_DATA);
        }
    };
    let report = match AuditReport::compute(&document, &items, provenance) {
        Ok(report) => report,
        Err(err) => {
            eprintln!("report failed: {err}");
            return ExitCode::from(EXIT_DATA);
        }
    };
    match write_report_files(&report, &document, &items, out) {
        Ok(paths) => {
            print!("{}", report.render_tables());
            println!("wrote: {}", paths.records.display());
            println!("wrote: {}", paths.tables.display());
            println!("wrote: {}", paths.retention_series.display());
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("cannot write report: {err}");
            ExitCode::from(EXIT_DATA)
        }
    }
}

fn cmd_simulate(out: &Path, items: usize, seed: u64, style: &str, fragments: &[u32]) -> ExitCode {
    let style = match style {
        "bare_letter" => AnswerStyle::BareLetter,
        "verbose" => AnswerStyle::Verbose,
        "garbled" => AnswerStyle::Garbled,
        other => {
            eprintln!("unknown style '{other}' (expected bare_letter, verbose, or garbled)");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if items == 0 {
        eprintln!("--items must be at least 1");
        return ExitCode::from(EXIT_CONFIG);
    }
    let ns: BTreeSet<u32> = fragments.iter().copied().collect();
    if let Some(&n) = ns.iter().find(|&&n| n < 2) {
        eprintln!("fragment count must be at least 2, got {n}");
        return ExitCode::from(EXIT_CONFIG);
    }
    match audioprobe::simulate::generate(out, items, style, seed, &ns) {
        Ok(fixture) => {
            println!("manifest: {}", fixture.manifest.display());
            println!("policy:   {}", fixture.policy.display());
            println!("config:   {}", fixture.config.display());
            println!("audio:    {}", fixture.audio_dir.display());
            println!();
            println!("next: audioprobe run --config {}", fixture.config.display());
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("simulate failed: {err}");
            ExitCode::from(EXIT_DATA)
        }
    }
}
