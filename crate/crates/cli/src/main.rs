//! Experiment harness CLI: single runs, ablation sweeps, training, metric
//! replay, population scoring, and config validation.
//!
//! Exit codes: 0 success, 1 partial failure (some sweep runs failed),
//! 2 configuration error.

use agora_cli::{eas_cmd, runner, sweep};
use agora_core::config::{config_hash, load_config, FullConfig};
use agora_core::engine::replay::replay_metrics;
use agora_core::engine::{EpisodeRecord, Scenario};
use agora_core::metrics::MetricBundle;
use agora_core::rl::{train_crash, train_lemon};
use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "agora",
    about = "Deterministic multi-agent market simulator and experiment harness"
)]
struct Cli {
    /// Path to the JSON config file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override for single runs and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Re-run sweep cells even when the manifest marks them done.
    #[arg(long, global = true)]
    force: bool,
    /// Worker pool size for sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    parallel: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single episode of the configured scenario.
    Run,
    /// Run the configured ablation grid across seeds, resumably.
    Sweep,
    /// Train a parametric policy with the configured trainer.
    Train,
    /// Aggregate a population directory of sweep CSVs into alignment scores.
    Eas {
        /// Directory with one subdirectory of CSVs per agent.
        #[arg(long)]
        population: PathBuf,
    },
    /// Recompute metrics from episode records.
    Replay {
        /// A record file or a directory searched for *.jsonl records.
        #[arg(long)]
        records: PathBuf,
    },
    /// Validate the config file and print the fully resolved configuration.
    ValidateConfig,
}

fn resolve_config(cli: &Cli) -> Result<FullConfig> {
    let mut config = match &cli.config {
        Some(path) => load_config(path)?,
        None => FullConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.plan.seed = seed;
    }
    Ok(config)
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn cmd_run(cli: &Cli) -> Result<i32> {
    let full = resolve_config(cli)?;
    let scenario = full.plan.scenario;
    let seed = full.plan.seed;
    let dir = out_dir(cli);
    std::fs::create_dir_all(&dir)?;

    let result = runner::execute(&full, scenario, &full.crash, &full.lemon, seed)?;
    let record_path = dir.join(format!("{scenario}_seed{seed}.jsonl"));
    let metrics_path = dir.join(format!("{scenario}_seed{seed}_metrics.json"));
    result.record.write_jsonl(&record_path)?;
    std::fs::write(
        &metrics_path,
        serde_json::to_string_pretty(&result.metrics_json)?,
    )?;
    println!(
        "wrote {} ({} events) and {}",
        record_path.display(),
        result.record.events.len(),
        metrics_path.display()
    );
    println!("{}", serde_json::to_string_pretty(&result.metrics_json)?);
    Ok(0)
}

fn cmd_sweep(cli: &Cli) -> Result<i32> {
    let full = resolve_config(cli)?;
    let dir = out_dir(cli);
    let outcome = sweep::run_sweep(&full, &dir, cli.parallel, cli.force)?;
    println!(
        "sweep: {} runs total, {} executed, {} resumed, {} failed; csv: {}",
        outcome.total,
        outcome.executed,
        outcome.skipped,
        outcome.failed,
        outcome.csv_path.display()
    );
    Ok(if outcome.failed > 0 { 1 } else { 0 })
}

fn cmd_train(cli: &Cli) -> Result<i32> {
    let full = resolve_config(cli)?;
    let scenario = full.plan.scenario;
    let trainer = full.rl.trainer_for(scenario);
    let seed = full.plan.seed;
    let dir = out_dir(cli);
    std::fs::create_dir_all(&dir)?;

    let outcome = match scenario {
        Scenario::Crash => train_crash(&trainer, &full.crash, &full.rl.crash_opponent, seed)?,
        Scenario::Lemon => train_lemon(&trainer, &full.lemon, &full.rl.lemon_base_buyer, seed)?,
    };

    let log_path = dir.join(format!("{scenario}_training_log.jsonl"));
    let mut log_text = String::new();
    for entry in &outcome.log {
        log_text.push_str(&serde_json::to_string(entry)?);
        log_text.push('\n');
    }
    std::fs::write(&log_path, log_text)?;

    let checkpoint_path = dir.join(format!("{scenario}_policy.json"));
    let hash = match scenario {
        Scenario::Crash => config_hash(&full.crash),
        Scenario::Lemon => config_hash(&full.lemon),
    };
    outcome.policy.save(&checkpoint_path, &hash)?;

    if let Some(last) = outcome.log.last() {
        println!(
            "training finished after {} iterations; final mean return {:.4}",
            outcome.log.len(),
            last.mean_return
        );
        if let Some(stats) = &last.crash {
            println!(
                "  market survival {:.3}, trained survival {:.3}, stage {}",
                stats.market_survival, stats.trained_survival, last.curriculum_stage
            );
        }
        if let Some(stats) = &last.lemon {
            println!(
                "  detection {:.3}, deceptive purchase rate {:.3}, stage {}",
                stats.detection, stats.purchase_rate, last.curriculum_stage
            );
        }
    }
    if let Some(reason) = &outcome.halted {
        println!("training halted early: {reason}");
    }
    println!(
        "wrote {} and {}",
        log_path.display(),
        checkpoint_path.display()
    );
    Ok(0)
}

fn cmd_eas(population: &Path, cli: &Cli) -> Result<i32> {
    let dir = out_dir(cli);
    std::fs::create_dir_all(&dir)?;
    let reports = eas_cmd::score_population(population)?;
    let report_path = dir.join("eas_report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&reports)?)?;
    eas_cmd::print_ranked_table(&reports);
    println!("wrote {}", report_path.display());
    Ok(0)
}

fn record_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(current) = stack.pop() {
        for entry in
            std::fs::read_dir(&current).with_context(|| format!("reading {}", current.display()))?
        {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "jsonl") {
                files.push(p);
            }
        }
    }
    files.sort();
    Ok(files)
}

fn cmd_replay(records: &Path) -> Result<i32> {
    let files = record_files(records)?;
    if files.is_empty() {
        anyhow::bail!("no .jsonl records under {}", records.display());
    }
    for file in files {
        let record = EpisodeRecord::read_jsonl(&file)
            .with_context(|| format!("parsing {}", file.display()))?;
        let bundle = replay_metrics(&record)?;
        let metrics = match &bundle {
            MetricBundle::Crash(b) => serde_json::to_value(agora_core::metrics::crash_metrics(b))?,
            MetricBundle::Lemon(b) => serde_json::to_value(agora_core::metrics::lemon_metrics(b))?,
        };
        println!(
            "{}",
            serde_json::json!({"record": file.display().to_string(), "metrics": metrics})
        );
    }
    Ok(0)
}

fn cmd_validate(cli: &Cli) -> Result<i32> {
    let full = resolve_config(cli)?;
    println!("{}", serde_json::to_string_pretty(&full)?);
    Ok(0)
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run => cmd_run(&cli),
        Command::Sweep => cmd_sweep(&cli),
        Command::Train => cmd_train(&cli),
        Command::Eas { population } => cmd_eas(population, &cli),
        Command::Replay { records } => cmd_replay(records),
        Command::ValidateConfig => cmd_validate(&cli),
    };
    let code = match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            // Config problems exit 2, everything else 1.
            let is_config = err.is::<agora_core::config::ConfigError>()
                || err.chain().any(|c| {
                    c.downcast_ref::<agora_core::config::ConfigError>()
                        .is_some()
                });
            if is_config {
                2
            } else {
                1
            }
        }
    };
    std::process::exit(code);
}
