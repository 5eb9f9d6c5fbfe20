//! Command-line surface: batch runs, transcript replay, report tables, and
//! the allocation optimum oracle.

mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use llamac::env_grid::GridMode;
use llamac::env_gs::{allocate_sum, brute_force_optimum, GsConfig};
use llamac::orchestrator::{
    replay_transcript, run_batch, BackendChoice, EnvSpec, Method, RunConfig,
};
use llamac::scenario::{load_scenario, ScenarioConfig};

#[derive(Parser)]
#[command(name = "llamac", version, about = "Actor-critic coordination harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more trials of a method on an environment.
    Run(Box<RunArgs>),
    /// Re-execute a recorded transcript and verify it reproduces the
    /// recorded result exactly.
    Replay {
        /// Path to a transcript (.jsonl) file.
        transcript: PathBuf,
    },
    /// Summarize per-trial CSVs into the aggregate table, optionally with a
    /// per-role token breakdown from transcripts.
    Report(ReportArgs),
    /// Print the exhaustive-scan optimum of the allocation reward and one
    /// integer allocation achieving it.
    OracleGs {
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        agents: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Environment: gs, grid-easy, or grid-hard.
    #[arg(long)]
    env: String,
    /// Grid size as RxC (grid environments).
    #[arg(long)]
    size: Option<String>,
    /// Agent count (gs).
    #[arg(long)]
    agents: Option<usize>,
    /// Method: llamac, debate, only_explore, only_exploit, decentralized,
    /// or scripted_greedy.
    #[arg(long)]
    method: String,
    /// Backend: scripted, http, or replay.
    #[arg(long, default_value = "scripted")]
    backend: String,
    /// Transcript to serve responses from (backend = replay).
    #[arg(long)]
    replay_from: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    trials: u64,
    /// Directory for transcripts, results.csv, and summary.txt.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Scenario file overriding the generated environment.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Decision rounds (gs horizon).
    #[arg(long)]
    rounds: Option<u64>,
    /// Step limit (grid horizon).
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    if_limit: Option<u64>,
    #[arg(long)]
    ef_limit: Option<u64>,
    #[arg(long)]
    mem_window: Option<usize>,
    /// Objects in a generated grid scenario (default: half the cell count).
    #[arg(long)]
    objects: Option<usize>,
    /// Colors in a generated grid scenario (default: up to 3).
    #[arg(long)]
    colors: Option<usize>,
    #[arg(long)]
    debate_rounds: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Per-trial CSV files.
    #[arg(required = true)]
    csv: Vec<PathBuf>,
    /// Directory of transcripts for the per-role token breakdown.
    #[arg(long)]
    transcripts: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(*args),
        Command::Replay { transcript } => cmd_replay(&transcript),
        Command::Report(args) => cmd_report(args),
        Command::OracleGs { mu, sigma, agents } => cmd_oracle(mu, sigma, agents),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn parse_size(size: &str) -> Result<(usize, usize)> {
    let (r, c) = size
        .split_once(['x', 'X'])
        .ok_or_else(|| anyhow!("--size must look like 2x4"))?;
    Ok((
        r.trim().parse().context("bad row count in --size")?,
        c.trim().parse().context("bad column count in --size")?,
    ))
}

fn build_env_spec(args: &RunArgs) -> Result<EnvSpec> {
    if let Some(path) = &args.scenario {
        let (config, _hash) = load_scenario(path)?;
        return match (config, args.env.as_str()) {
            (ScenarioConfig::Gs(c), "gs") => Ok(EnvSpec::Gs(c)),
            (ScenarioConfig::Grid(c), "grid-easy") if c.mode == GridMode::Easy => {
                Ok(EnvSpec::Grid(c))
            }
            (ScenarioConfig::Grid(c), "grid-hard") if c.mode == GridMode::Hard => {
                Ok(EnvSpec::Grid(c))
            }
            _ => bail!("scenario file does not match --env {}", args.env),
        };
    }
    match args.env.as_str() {
        "gs" => {
            let agents = args
                .agents
                .ok_or_else(|| anyhow!("--agents is required for gs"))?;
            let mut config = GsConfig::with_defaults(agents);
            if let Some(mu) = args.mu {
                config.mu = mu;
            }
            if let Some(sigma) = args.sigma {
                config.sigma = sigma;
            }
            if let Some(rounds) = args.rounds {
                config.max_rounds = rounds;
            }
            config.validate().map_err(|e| anyhow!(e))?;
            Ok(EnvSpec::Gs(config))
        }
        mode @ ("grid-easy" | "grid-hard") => {
            let size = args
                .size
                .as_deref()
                .ok_or_else(|| anyhow!("--size is required for grid environments"))?;
            let (rows, cols) = parse_size(size)?;
            let objects = args.objects.unwrap_or(((rows * cols) / 2).max(1));
            let colors = args.colors.unwrap_or(objects.min(3));
            Ok(EnvSpec::GridRandom {
                rows,
                cols,
                mode: if mode == "grid-easy" {
                    GridMode::Easy
                } else {
                    GridMode::Hard
                },
                objects,
                colors,
            })
        }
        other => bail!("unknown env `{other}` (expected gs, grid-easy, or grid-hard)"),
    }
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let method = Method::parse(&args.method)
        .ok_or_else(|| anyhow!("unknown method `{}`", args.method))?;
    let backend = match args.backend.as_str() {
        "scripted" => BackendChoice::Scripted,
        "http" => BackendChoice::Http,
        "replay" => {
            let path = args
                .replay_from
                .clone()
                .ok_or_else(|| anyhow!("--replay-from is required with --backend replay"))?;
            BackendChoice::Replay { path }
        }
        other => bail!("unknown backend `{other}` (expected scripted, http, or replay)"),
    };
    let env = build_env_spec(&args)?;
    let mut config = RunConfig::new(env, method, backend, args.seed);
    // gs rounds are already folded into the GsConfig; grids carry a separate
    // horizon override.
    if !matches!(config.env, EnvSpec::Gs(_)) {
        config.horizon = args.max_steps;
    }
    if let Some(v) = args.if_limit {
        config.if_limit = v;
    }
    if let Some(v) = args.ef_limit {
        config.ef_limit = v;
    }
    config.mem_window = args.mem_window;
    if let Some(v) = args.debate_rounds {
        config.debate_rounds = v;
    }
    config.record_dir = args.record.clone();

    let report = run_batch(&[config], args.trials)?;
    print!("{}", report::trial_table(&report.rows));
    print!("{}", report::aggregate_table(&report.aggregates));
    print!("{}", report::role_token_table_from_results(&report.results));

    if let Some(dir) = &args.record {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join("results.csv");
        report::write_csv(&csv_path, &report.rows)?;
        let summary = format!(
            "{}{}{}",
            report::trial_table(&report.rows),
            report::aggregate_table(&report.aggregates),
            report::role_token_table_from_results(&report.results)
        );
        std::fs::write(dir.join("summary.txt"), summary)?;
        println!("wrote {}", csv_path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_replay(path: &std::path::Path) -> Result<ExitCode> {
    let outcome = replay_transcript(path)?;
    println!(
        "result: {}",
        if outcome.result_matches {
            "identical"
        } else {
            "MISMATCH"
        }
    );
    println!(
        "transitions: {}",
        if outcome.transitions_match {
            "identical"
        } else {
            "MISMATCH"
        }
    );
    println!(
        "episode: success={} steps={} feedback={}",
        outcome.replayed.success, outcome.replayed.steps, outcome.replayed.feedback_count
    );
    if outcome.matches() {
        Ok(ExitCode::SUCCESS)
    } else {
        Err(anyhow!("replay diverged from the recorded episode"))
    }
}

fn cmd_report(args: ReportArgs) -> Result<ExitCode> {
    let mut rows = Vec::new();
    for path in &args.csv {
        rows.extend(report::read_csv(path)?);
    }
    if rows.is_empty() {
        bail!("no trial rows found in the given CSV files");
    }
    let aggregates = report::group_aggregates(&rows);
    print!("{}", report::aggregate_table(&aggregates));
    if let Some(dir) = &args.transcripts {
        print!("{}", report::role_token_table_from_transcripts(dir)?);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_oracle(mu: f64, sigma: f64, agents: usize) -> Result<ExitCode> {
    let mut config = GsConfig::with_defaults(agents);
    config.mu = mu;
    config.sigma = sigma;
    config.validate().map_err(|e| anyhow!(e))?;
    let (x_star, r_star) = brute_force_optimum(&config);
    let allocation = allocate_sum(&config, x_star);
    println!("agents: {agents}");
    println!("optimal sum x*: {x_star}");
    println!("optimal reward R*: {r_star}");
    println!(
        "allocation: [{}]",
        allocation
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(ExitCode::SUCCESS)
}
