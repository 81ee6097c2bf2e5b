//! Command surface tests: exit codes, file outputs, and the
//! simulate → validate → segment → run → report flow.

use std::path::Path;
use std::process::{Command, Output};

fn audioprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_audioprobe"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).to_string()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).to_string()
}

fn write_lines(path: &Path, lines: &[String]) {
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}

fn mcq_line(id: &str, gold: usize) -> String {
    serde_json::json!({
        "id": id,
        "benchmark": "demo",
        "task_type": "mcq",
        "question": "Which?",
        "choices": ["one", "two", "three", "four"],
        "gold": gold,
        "category": "sound",
    })
    .to_string()
}

#[test]
fn validate_accepts_a_clean_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.jsonl");
    write_lines(&manifest, &[mcq_line("q1", 0), mcq_line("q2", 1)]);
    let output = audioprobe(&["validate", "--manifest", manifest.to_str().unwrap()]);
    assert!(output.status.success(), "{}", stderr(&output));
    assert!(stdout(&output).contains("2 item(s)"));
}

#[test]
fn validate_reports_duplicate_ids_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.jsonl");
    write_lines(&manifest, &[mcq_line("q7", 0), mcq_line("q7", 1)]);
    let output = audioprobe(&["validate", "--manifest", manifest.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(3));
    let err = stderr(&output);
    assert!(err.contains("line 2"), "{err}");
    assert!(err.contains("q7"), "{err}");
}

#[test]
fn validate_rejects_an_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("empty.jsonl");
    std::fs::write(&manifest, "\n\n").unwrap();
    let output = audioprobe(&["validate", "--manifest", manifest.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(3));
    assert!(stderr(&output).contains("no records"));
}

#[test]
fn validate_missing_file_is_a_config_error() {
    let output = audioprobe(&["validate", "--manifest", "/no/such/file.jsonl"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn simulate_segment_run_report_flow() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();

    let sim = audioprobe(&[
        "simulate", "--out", out, "--items", "6", "--seed", "4",
        "--fragments", "2,3",
    ]);
    assert!(sim.status.success(), "{}", stderr(&sim));
    let manifest = dir.path().join("manifest.jsonl");
    let config = dir.path().join("config.json");
    assert!(manifest.exists() && config.exists());

    // Segment: 6 clips × (2 + 3) fragments.
    let cache_root = dir.path().join("cache");
    let seg = audioprobe(&[
        "segment",
        "--manifest", manifest.to_str().unwrap(),
        "--fragments", "2,3",
        "--cache-root", cache_root.to_str().unwrap(),
    ]);
    assert!(seg.status.success(), "{}", stderr(&seg));
    assert!(stdout(&seg).contains("30 new file(s)"));

    // Idempotent rerun writes nothing new.
    let seg2 = audioprobe(&[
        "segment",
        "--manifest", manifest.to_str().unwrap(),
        "--fragments", "2,3",
        "--cache-root", cache_root.to_str().unwrap(),
    ]);
    assert!(seg2.status.success());
    assert!(stdout(&seg2).contains("0 new file(s)"));

    let run = audioprobe(&["run", "--config", config.to_str().unwrap()]);
    assert!(run.status.success(), "{}", stderr(&run));
    let grid = dir.path().join("out/grid.jsonl");
    assert!(grid.exists(), "{}", stdout(&run));
    assert!(dir.path().join("out/run_manifest.json").exists());

    let report_dir = dir.path().join("report");
    let report = audioprobe(&[
        "report",
        "--grid", grid.to_str().unwrap(),
        "--manifest", manifest.to_str().unwrap(),
        "--out", report_dir.to_str().unwrap(),
    ]);
    assert!(report.status.success(), "{}", stderr(&report));
    let text = stdout(&report);
    assert!(text.contains("== Text prior =="));
    assert!(text.contains("== Retention"));
    assert!(report_dir.join("report.jsonl").exists());
    assert!(report_dir.join("report.txt").exists());
    assert!(report_dir.join("retention_series.csv").exists());
}

#[test]
fn default_conditions_give_seventeen_per_item() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    // Default fragments 2,3,4,5: full + no_audio + tb + 14 fragments = 17.
    let sim = audioprobe(&["simulate", "--out", out, "--items", "6", "--seed", "2"]);
    assert!(sim.status.success(), "{}", stderr(&sim));
    let run = audioprobe(&[
        "run",
        "--config",
        dir.path().join("config.json").to_str().unwrap(),
    ]);
    assert!(run.status.success(), "{}", stderr(&run));
    let grid = std::fs::read_to_string(dir.path().join("out/grid.jsonl")).unwrap();
    let cell_lines = grid.lines().filter(|l| l.contains(r#""record":"cell""#)).count();
    assert_eq!(cell_lines, 6 * 17);

    // Narrowing the condition kinds narrows the grid.
    let narrow = audioprobe(&[
        "run",
        "--config", dir.path().join("config.json").to_str().unwrap(),
        "--conditions", "full,no_audio",
        "--cache-root", dir.path().join("cache2").to_str().unwrap(),
        "--out", dir.path().join("out2").to_str().unwrap(),
    ]);
    assert!(narrow.status.success(), "{}", stderr(&narrow));
    let grid2 = std::fs::read_to_string(dir.path().join("out2/grid.jsonl")).unwrap();
    let cell_lines2 = grid2.lines().filter(|l| l.contains(r#""record":"cell""#)).count();
    assert_eq!(cell_lines2, 6 * 2);
}

#[test]
fn run_with_max_requests_resumes_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let sim = audioprobe(&[
        "simulate", "--out", out, "--items", "4", "--seed", "9",
        "--fragments", "2",
    ]);
    assert!(sim.status.success());
    let config = dir.path().join("config.json");

    // 4 items × (full + no_audio + tb + 2 fragments) = 20 cells; cap at 10.
    let first = audioprobe(&[
        "run", "--config", config.to_str().unwrap(), "--max-requests", "10",
    ]);
    assert!(first.status.success(), "{}", stderr(&first));
    assert!(stdout(&first).contains("grid not written"));
    assert!(!dir.path().join("out/grid.jsonl").exists());

    let second = audioprobe(&["run", "--config", config.to_str().unwrap()]);
    assert!(second.status.success(), "{}", stderr(&second));
    assert!(stdout(&second).contains("10 cache hit(s)"), "{}", stdout(&second));
    assert!(dir.path().join("out/grid.jsonl").exists());
}

#[test]
fn degraded_run_exits_with_code_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    // Garbled answers with no judge configured: every cell degrades.
    let sim = audioprobe(&[
        "simulate", "--out", out, "--items", "2", "--seed", "1",
        "--style", "garbled", "--fragments", "2",
    ]);
    assert!(sim.status.success());
    let config = dir.path().join("config.json");
    let run = audioprobe(&["run", "--config", config.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(4), "{}", stderr(&run));
    assert!(stderr(&run).contains("judge-unavailable"));
    // The grid is still written; degradation is visible, not fatal.
    assert!(dir.path().join("out/grid.jsonl").exists());
}

#[test]
fn run_without_config_or_manifest_is_a_config_error() {
    let output = audioprobe(&["run"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn run_with_bad_backend_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let output = audioprobe(&[
        "run",
        "--manifest", dir.path().join("m.jsonl").to_str().unwrap(),
        "--cache-root", dir.path().join("c").to_str().unwrap(),
        "--backend", "quantum",
    ]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr(&output).contains("quantum"));
}

#[test]
fn report_on_a_missing_grid_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.jsonl");
    write_lines(&manifest, &[mcq_line("q1", 0)]);
    let output = audioprobe(&[
        "report",
        "--grid", dir.path().join("missing.jsonl").to_str().unwrap(),
        "--manifest", manifest.to_str().unwrap(),
        "--out", dir.path().join("rep").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(3));
}

#[test]
fn simulate_rejects_bad_style_and_fragments() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let bad_style = audioprobe(&["simulate", "--out", out, "--style", "haiku"]);
    assert_eq!(bad_style.status.code(), Some(2));
    let bad_fragments = audioprobe(&["simulate", "--out", out, "--fragments", "1,2"]);
    assert_eq!(bad_fragments.status.code(), Some(2));
}
