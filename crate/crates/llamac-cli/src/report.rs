//! Table formatting, CSV I/O, and token breakdowns.
//!
//! All output here is deterministic: sorted keys, fixed float formats, no
//! timestamps or locale-dependent pieces, so identical inputs produce
//! byte-identical reports.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};

use llamac::backend::TokenUsage;
use llamac::orchestrator::{aggregate_rows, AggregateRow, EpisodeResult, TrialRow};
use llamac::transcript::{fold_usage, read_transcript};

/// One line per trial, mirroring the CSV columns.
pub fn trial_table(rows: &[TrialRow]) -> String {
    let mut out = String::from(
        "method           env        size   seed                  ok  steps  feedback  prompt_tok  completion_tok\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{:<16} {:<10} {:<6} {:<20}  {:<3} {:<6} {:<9} {:<11} {}\n",
            r.method,
            r.env,
            r.size,
            r.seed,
            if r.success { "yes" } else { "no" },
            r.steps,
            r.feedback,
            r.prompt_tokens,
            r.completion_tokens
        ));
    }
    out
}

fn mean_sd_cell(mean: Option<f64>, sd: Option<f64>) -> String {
    match (mean, sd) {
        (Some(m), Some(s)) => format!("{m:.1}({s:.2})"),
        _ => "-".to_string(),
    }
}

/// Aggregate table: success rate plus mean(sd) of steps and feedback over
/// the successful trials.
pub fn aggregate_table(aggregates: &[AggregateRow]) -> String {
    let mut out = String::from(
        "method           env        size   trials  success  steps        feedback\n",
    );
    for a in aggregates {
        out.push_str(&format!(
            "{:<16} {:<10} {:<6} {:<7} {:<8} {:<12} {}\n",
            a.method,
            a.env,
            a.size,
            a.trials,
            format!("{:.0}%", a.success_rate() * 100.0),
            mean_sd_cell(a.steps_mean, a.steps_sd),
            mean_sd_cell(a.feedback_mean, a.feedback_sd)
        ));
    }
    out
}

fn role_token_table(usage: &BTreeMap<String, TokenUsage>) -> String {
    let mut out = String::from("role             prompt_tok  completion_tok  total_tok\n");
    let mut total = TokenUsage::default();
    for (role, u) in usage {
        total.add(u);
        out.push_str(&format!(
            "{:<16} {:<11} {:<15} {}\n",
            role, u.prompt_tokens, u.completion_tokens, u.total_tokens
        ));
    }
    out.push_str(&format!(
        "{:<16} {:<11} {:<15} {}\n",
        "total", total.prompt_tokens, total.completion_tokens, total.total_tokens
    ));
    out
}

/// Per-role token usage summed over the in-memory episode results.
pub fn role_token_table_from_results(results: &[EpisodeResult]) -> String {
    let mut usage: BTreeMap<String, TokenUsage> = BTreeMap::new();
    for result in results {
        for (role, u) in &result.token_usage {
            usage.entry(role.clone()).or_default().add(u);
        }
    }
    role_token_table(&usage)
}

/// Per-role token usage folded over every exchange of every transcript in a
/// directory. By construction this is the identity the episode results
/// report.
pub fn role_token_table_from_transcripts(dir: &Path) -> Result<String> {
    let mut usage: BTreeMap<String, TokenUsage> = BTreeMap::new();
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    for path in paths {
        let transcript = read_transcript(&path)?;
        for (role, u) in fold_usage(transcript.exchanges()) {
            usage.entry(role).or_default().add(&u);
        }
    }
    Ok(role_token_table(&usage))
}

const CSV_HEADER: [&str; 9] = [
    "method",
    "env",
    "size",
    "seed",
    "success",
    "steps",
    "feedback",
    "prompt_tokens",
    "completion_tokens",
];

pub fn write_csv(path: &Path, rows: &[TrialRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    writer.write_record(CSV_HEADER)?;
    for r in rows {
        writer.write_record([
            r.method.as_str(),
            r.env.as_str(),
            r.size.as_str(),
            &r.seed.to_string(),
            if r.success { "true" } else { "false" },
            &r.steps.to_string(),
            &r.feedback.to_string(),
            &r.prompt_tokens.to_string(),
            &r.completion_tokens.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<TrialRow>> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        rows.push(TrialRow {
            method: record.get(0).unwrap_or_default().to_string(),
            env: record.get(1).unwrap_or_default().to_string(),
            size: record.get(2).unwrap_or_default().to_string(),
            seed: record.get(3).unwrap_or_default().parse().unwrap_or(0),
            success: record.get(4) == Some("true"),
            steps: record.get(5).unwrap_or_default().parse().unwrap_or(0),
            feedback: record.get(6).unwrap_or_default().parse().unwrap_or(0),
            prompt_tokens: record.get(7).unwrap_or_default().parse().unwrap_or(0),
            completion_tokens: record.get(8).unwrap_or_default().parse().unwrap_or(0),
        });
    }
    Ok(rows)
}

/// Group rows by (method, env, size) and aggregate each group.
pub fn group_aggregates(rows: &[TrialRow]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(String, String, String), Vec<TrialRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.method.clone(), r.env.clone(), r.size.clone()))
            .or_default()
            .push(r.clone());
    }
    groups
        .into_iter()
        .map(|((method, env, size), rows)| aggregate_rows(&method, &env, &size, &rows))
        .collect()
}
