//! End-to-end checks of the command-line surface: flags, exit codes, CSV
//! output, replay verification, and report determinism.

use std::path::Path;
use std::process::{Command, Output};

fn llamac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_llamac"))
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

fn first_transcript(dir: &Path) -> std::path::PathBuf {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    paths.into_iter().next().expect("a transcript was written")
}

#[test]
fn run_records_transcripts_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let record = dir.path().to_str().unwrap();
    let out = llamac(&[
        "run", "--env", "gs", "--agents", "3", "--method", "llamac", "--backend", "scripted",
        "--seed", "1", "--trials", "10", "--record", record,
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 11, "header plus one row per trial");
    assert_eq!(
        lines[0],
        "method,env,size,seed,success,steps,feedback,prompt_tokens,completion_tokens"
    );
    let transcripts = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "jsonl")
        })
        .count();
    assert_eq!(transcripts, 10);
    // One aggregate row in the table.
    let text = stdout(&out);
    assert!(text.contains("100%"), "aggregate success missing: {text}");
    assert!(dir.path().join("summary.txt").exists());
}

#[test]
fn unknown_method_is_a_usage_error() {
    let out = llamac(&["run", "--env", "gs", "--agents", "3", "--method", "nonsense"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("unknown method"));
}

#[test]
fn unknown_env_is_a_usage_error() {
    let out = llamac(&["run", "--env", "maze", "--method", "llamac"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("unknown env"));
}

#[test]
fn failed_trials_still_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = llamac(&[
        "run", "--env", "grid-easy", "--size", "2x4", "--method", "scripted_greedy",
        "--max-steps", "1", "--seed", "3", "--trials", "2", "--record",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert!(csv.contains("false"), "expected failed trials: {csv}");
}

#[test]
fn replay_command_verifies_recorded_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = llamac(&[
        "run", "--env", "grid-hard", "--size", "2x2", "--method", "llamac", "--backend",
        "scripted", "--seed", "5", "--trials", "1", "--record", dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let transcript = first_transcript(dir.path());
    let out = llamac(&["replay", transcript.to_str().unwrap()]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("result: identical"));
    assert!(text.contains("transitions: identical"));
}

#[test]
fn replay_rejects_truncated_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = llamac(&[
        "run", "--env", "gs", "--agents", "2", "--method", "llamac", "--backend", "scripted",
        "--seed", "2", "--trials", "1", "--record", dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let transcript = first_transcript(dir.path());
    let text = std::fs::read_to_string(&transcript).unwrap();
    let cut = &text[..text.len() * 2 / 3];
    std::fs::write(&transcript, cut).unwrap();
    let out = llamac(&["replay", transcript.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).to_lowercase().contains("truncated"), "{}", stderr(&out));
}

#[test]
fn report_aggregates_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let record = dir.path().to_str().unwrap();
    let out = llamac(&[
        "run", "--env", "gs", "--agents", "3", "--method", "only_exploit", "--backend",
        "scripted", "--seed", "9", "--trials", "4", "--record", record,
    ]);
    assert!(out.status.success());
    let csv = dir.path().join("results.csv");
    let first = llamac(&[
        "report",
        csv.to_str().unwrap(),
        "--transcripts",
        record,
    ]);
    assert!(first.status.success(), "stderr: {}", stderr(&first));
    let second = llamac(&[
        "report",
        csv.to_str().unwrap(),
        "--transcripts",
        record,
    ]);
    assert_eq!(stdout(&first), stdout(&second), "report must be idempotent");
    let text = stdout(&first);
    assert!(text.contains("only_exploit"));
    assert!(text.contains("critic_exploit"), "role breakdown missing: {text}");
}

#[test]
fn report_checks_token_identity_against_csv() {
    // The per-role table folded from transcripts must sum to exactly the
    // totals the CSV rows carry.
    let dir = tempfile::tempdir().unwrap();
    let record = dir.path().to_str().unwrap();
    let out = llamac(&[
        "run", "--env", "gs", "--agents", "3", "--method", "llamac", "--backend", "scripted",
        "--seed", "11", "--trials", "3", "--record", record,
    ]);
    assert!(out.status.success());
    let csv_text = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let mut csv_prompt = 0u64;
    let mut csv_completion = 0u64;
    for line in csv_text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        csv_prompt += cols[7].parse::<u64>().unwrap();
        csv_completion += cols[8].parse::<u64>().unwrap();
    }
    let report = llamac(&["report", dir.path().join("results.csv").to_str().unwrap(), "--transcripts", record]);
    let text = stdout(&report);
    let total_line = text
        .lines()
        .find(|l| l.starts_with("total"))
        .expect("total row present");
    let fields: Vec<&str> = total_line.split_whitespace().collect();
    assert_eq!(fields[1].parse::<u64>().unwrap(), csv_prompt);
    assert_eq!(fields[2].parse::<u64>().unwrap(), csv_completion);
}

#[test]
fn oracle_gs_prints_optimum_and_allocation() {
    let out = llamac(&["oracle-gs", "--mu", "14", "--sigma", "5", "--agents", "3"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("optimal sum x*: 15"), "{text}");
    assert!(text.contains("allocation: [5, 5, 5]"), "{text}");

    // Mean far beyond the range pins the boundary.
    let out = llamac(&["oracle-gs", "--mu", "1000", "--sigma", "5", "--agents", "2"]);
    assert!(stdout(&out).contains("optimal sum x*: 18"), "{}", stdout(&out));

    // A single agent owns the whole allocation.
    let out = llamac(&["oracle-gs", "--mu", "6", "--sigma", "2", "--agents", "1"]);
    let text = stdout(&out);
    assert!(text.contains("allocation: ["), "{text}");
    let alloc_line = text.lines().find(|l| l.starts_with("allocation")).unwrap();
    assert_eq!(alloc_line.matches(',').count(), 0, "one entry: {alloc_line}");
}

#[test]
fn scenario_flag_drives_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.toml");
    std::fs::write(
        &scenario,
        r#"
env = "gs"

[gs]
agents = 2
mu = 5.0
sigma = 2.0
rounds = 4
"#,
    )
    .unwrap();
    let out = llamac(&[
        "run", "--env", "gs", "--method", "scripted_greedy", "--scenario",
        scenario.to_str().unwrap(), "--seed", "1",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains(" 4 "), "steps column should show 4 rounds: {text}");
}
