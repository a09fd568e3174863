//! Experiment sweeps over the ablation grids, with a worker pool, a
//! resumable manifest, per-run artifacts, and a cross-run CSV summary.

use crate::manifest::{ManifestEntry, RunManifest, RunStatus};
use crate::runner;
use agora_core::config::{config_hash, FullConfig};
use agora_core::engine::Scenario;
use agora_core::metrics::{CrashMetrics, LemonMetrics};
use anyhow::{Context, Result};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

/// One grid cell x seed to execute.
#[derive(Debug, Clone)]
pub struct PlannedRun {
    pub run_id: String,
    pub seed: u64,
    pub cell: BTreeMap<String, serde_json::Value>,
    pub crash: agora_core::crash::CrashConfig,
    pub lemon: agora_core::lemon::LemonConfig,
}

/// Expand the plan's grid axes and seeds into concrete runs.
pub fn plan_runs(full: &FullConfig) -> Vec<PlannedRun> {
    let scenario = full.plan.scenario;
    let horizon = full.plan.sweep_horizon_for(scenario);
    let mut runs = Vec::new();
    match scenario {
        Scenario::Crash => {
            for &k in &full.plan.grid.crash_k {
                for &dlc in &full.plan.grid.crash_dlc {
                    for &seed in &full.plan.seeds {
                        let mut crash = full.crash.clone();
                        crash.stabilizing_firms = k;
                        crash.dlc = dlc;
                        crash.horizon = horizon;
                        runs.push(PlannedRun {
                            run_id: format!("crash_k{k}_dlc{dlc}_seed{seed}"),
                            seed,
                            cell: BTreeMap::from([
                                ("k".to_string(), serde_json::json!(k)),
                                ("dlc".to_string(), serde_json::json!(dlc)),
                            ]),
                            crash,
                            lemon: full.lemon.clone(),
                        });
                    }
                }
            }
        }
        Scenario::Lemon => {
            for &k in &full.plan.grid.lemon_k {
                for &rep_visible in &full.plan.grid.lemon_rep_visible {
                    for &seed in &full.plan.seeds {
                        let mut lemon = full.lemon.clone();
                        lemon.sybil_count = k;
                        lemon.rep_visible = rep_visible;
                        lemon.horizon = horizon;
                        runs.push(PlannedRun {
                            run_id: format!("lemon_K{k}_rep{rep_visible}_seed{seed}"),
                            seed,
                            cell: BTreeMap::from([
                                ("K".to_string(), serde_json::json!(k)),
                                ("rep_visible".to_string(), serde_json::json!(rep_visible)),
                            ]),
                            crash: full.crash.clone(),
                            lemon,
                        });
                    }
                }
            }
        }
    }
    runs
}

fn run_config_hash(full: &FullConfig, planned: &PlannedRun) -> String {
    match full.plan.scenario {
        Scenario::Crash => config_hash(&(&planned.crash, &full.plan.roster)),
        Scenario::Lemon => config_hash(&(&planned.lemon, &full.plan.roster)),
    }
}

pub struct SweepOutcome {
    pub total: usize,
    pub executed: usize,
    pub skipped: usize,
    pub failed: usize,
    pub csv_path: PathBuf,
}

/// Execute every planned run, resumably, with at most `parallel` workers.
/// A failed run marks its manifest entry failed and the sweep continues.
pub fn run_sweep(
    full: &FullConfig,
    out_dir: &Path,
    parallel: usize,
    force: bool,
) -> Result<SweepOutcome> {
    std::fs::create_dir_all(out_dir)?;
    let runs = plan_runs(full);
    let total = runs.len();
    let manifest = Mutex::new(RunManifest::load(out_dir)?);

    let mut skipped = 0usize;
    let mut pending: Vec<PlannedRun> = Vec::new();
    {
        let manifest = manifest.lock().expect("manifest lock");
        for planned in runs {
            let hash = run_config_hash(full, &planned);
            if !force && manifest.completed(&planned.run_id, &hash) {
                skipped += 1;
            } else {
                pending.push(planned);
            }
        }
    }

    let queue: Mutex<Vec<PlannedRun>> = Mutex::new(pending);
    let completed: Mutex<usize> = Mutex::new(0);
    let failures: Mutex<Vec<String>> = Mutex::new(Vec::new());
    let workers = parallel.max(1);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let Some(planned) = queue.lock().expect("queue lock").pop() else {
                    break;
                };
                let started = Instant::now();
                let hash = run_config_hash(full, &planned);
                let run_dir = out_dir.join(&planned.run_id);
                let result = (|| -> Result<()> {
                    std::fs::create_dir_all(&run_dir)?;
                    let output = runner::execute(
                        full,
                        full.plan.scenario,
                        &planned.crash,
                        &planned.lemon,
                        planned.seed,
                    )?;
                    output
                        .record
                        .write_jsonl(&run_dir.join("episode.jsonl"))
                        .context("writing episode record")?;
                    std::fs::write(
                        run_dir.join("metrics.json"),
                        serde_json::to_string_pretty(&output.metrics_json)?,
                    )?;
                    Ok(())
                })();

                let wall = started.elapsed().as_secs_f64();
                let mut entry = ManifestEntry {
                    run_id: planned.run_id.clone(),
                    status: RunStatus::Done,
                    config_hash: hash,
                    seed: planned.seed,
                    cell: planned.cell.clone(),
                    record_path: format!("{}/episode.jsonl", planned.run_id),
                    metrics_path: format!("{}/metrics.json", planned.run_id),
                    wall_time_secs: wall,
                    llm_prompt_tokens: 0,
                    llm_completion_tokens: 0,
                    error: None,
                };
                match result {
                    Ok(()) => {
                        // Token totals come from the record on disk.
                        if let Ok(record) = agora_core::engine::EpisodeRecord::read_jsonl(
                            &run_dir.join("episode.jsonl"),
                        ) {
                            let usage = record.llm_usage_totals();
                            entry.llm_prompt_tokens = usage.prompt_tokens;
                            entry.llm_completion_tokens = usage.completion_tokens;
                        }
                        *completed.lock().expect("completed lock") += 1;
                    }
                    Err(err) => {
                        entry.status = RunStatus::Failed;
                        entry.error = Some(format!("{err:#}"));
                        failures
                            .lock()
                            .expect("failures lock")
                            .push(planned.run_id.clone());
                    }
                }
                let mut manifest = manifest.lock().expect("manifest lock");
                manifest.upsert(entry);
                let _ = manifest.save(out_dir);
            });
        }
    });

    let manifest = manifest.into_inner().expect("manifest lock");
    manifest.save(out_dir)?;

    // Aggregate the CSV from the manifest's completed runs (including prior
    // resumed ones), deterministically sorted, independent of worker count.
    let csv_path = out_dir.join(match full.plan.scenario {
        Scenario::Crash => "crash_summary.csv",
        Scenario::Lemon => "lemon_summary.csv",
    });
    write_summary_csv(full, out_dir, &manifest, &csv_path)?;
    print_summary_table(full, &manifest, out_dir);

    let failed = failures.into_inner().expect("failures lock").len();
    let executed = completed.into_inner().expect("completed lock");
    Ok(SweepOutcome {
        total,
        executed,
        skipped,
        failed,
        csv_path,
    })
}

fn cell_sort_key(entry: &ManifestEntry) -> (String, u64) {
    (
        serde_json::to_string(&entry.cell).expect("cell serializes"),
        entry.seed,
    )
}

fn load_metrics(out_dir: &Path, entry: &ManifestEntry) -> Option<serde_json::Value> {
    let text = std::fs::read_to_string(out_dir.join(&entry.metrics_path)).ok()?;
    serde_json::from_str(&text).ok()
}

/// One row per (agent, config-cell, seed).
fn write_summary_csv(
    full: &FullConfig,
    out_dir: &Path,
    manifest: &RunManifest,
    csv_path: &Path,
) -> Result<()> {
    let agent = full.plan.agent_label();
    let mut entries: Vec<&ManifestEntry> = manifest
        .entries
        .iter()
        .filter(|e| e.status == RunStatus::Done)
        .collect();
    entries.sort_by_key(|e| cell_sort_key(e));

    let mut writer = csv::Writer::from_path(csv_path)?;
    match full.plan.scenario {
        Scenario::Crash => {
            writer.write_record([
                "scenario",
                "agent",
                "k",
                "dlc",
                "seed",
                "T",
                "bankruptcy_rate",
                "sigma_raw",
                "price_over_cost",
                "total_volume",
                "normalized_volume",
                "mean_profit",
            ])?;
            // Volume baselines: mean volume of the k = 0 cell per dlc.
            let mut baselines: BTreeMap<u64, (f64, u64)> = BTreeMap::new();
            let mut parsed: Vec<(&ManifestEntry, CrashMetrics)> = Vec::new();
            for entry in entries {
                let Some(value) = load_metrics(out_dir, entry) else {
                    continue;
                };
                let metrics: CrashMetrics = serde_json::from_value(value)?;
                let k = entry.cell["k"].as_u64().unwrap_or(0);
                let dlc = entry.cell["dlc"].as_u64().unwrap_or(0);
                if k == 0 {
                    let slot = baselines.entry(dlc).or_insert((0.0, 0));
                    slot.0 += metrics.total_volume as f64;
                    slot.1 += 1;
                }
                parsed.push((entry, metrics));
            }
            let horizon = full.plan.sweep_horizon_for(Scenario::Crash);
            for (entry, metrics) in parsed {
                let dlc = entry.cell["dlc"].as_u64().unwrap_or(0);
                let normalized = baselines
                    .get(&dlc)
                    .filter(|(_, n)| *n > 0)
                    .map(|(sum, n)| metrics.total_volume as f64 / (sum / *n as f64).max(1e-12));
                writer.write_record([
                    "crash".to_string(),
                    agent.clone(),
                    entry.cell["k"].to_string(),
                    entry.cell["dlc"].to_string(),
                    entry.seed.to_string(),
                    horizon.to_string(),
                    metrics.bankruptcy_rate.to_string(),
                    metrics.sigma_raw.to_string(),
                    metrics
                        .price_over_cost
                        .map(|v| v.to_string())
                        .unwrap_or_default(),
                    metrics.total_volume.to_string(),
                    normalized.map(|v| v.to_string()).unwrap_or_default(),
                    metrics.mean_profit.to_string(),
                ])?;
            }
        }
        Scenario::Lemon => {
            writer.write_record([
                "scenario",
                "agent",
                "K",
                "rep_visible",
                "seed",
                "T",
                "detection_rate",
                "deceptive_purchase_rate",
                "market_survival",
                "sybil_revenue_share",
                "bids_per_step",
                "total_surplus",
                "reputation_gap",
            ])?;
            let horizon = full.plan.sweep_horizon_for(Scenario::Lemon);
            for entry in entries {
                let Some(value) = load_metrics(out_dir, entry) else {
                    continue;
                };
                let metrics: LemonMetrics = serde_json::from_value(value)?;
                writer.write_record([
                    "lemon".to_string(),
                    agent.clone(),
                    entry.cell["K"].to_string(),
                    entry.cell["rep_visible"].to_string(),
                    entry.seed.to_string(),
                    horizon.to_string(),
                    metrics
                        .detection_rate
                        .map(|v| v.to_string())
                        .unwrap_or_default(),
                    metrics.deceptive_purchase_rate.to_string(),
                    metrics.market_survival.to_string(),
                    metrics.sybil_revenue_share.to_string(),
                    metrics.bids_per_step.to_string(),
                    metrics.total_surplus.to_string(),
                    metrics
                        .reputation_gap
                        .map(|v| v.to_string())
                        .unwrap_or_default(),
                ])?;
            }
        }
    }
    writer.flush()?;
    Ok(())
}

/// Mean headline metric per grid cell, printed after a sweep.
fn print_summary_table(full: &FullConfig, manifest: &RunManifest, out_dir: &Path) {
    let mut cells: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for entry in &manifest.entries {
        if entry.status != RunStatus::Done {
            continue;
        }
        let Some(value) = load_metrics(out_dir, entry) else {
            continue;
        };
        let (label, headline) = match full.plan.scenario {
            Scenario::Crash => (
                format!("k={} dlc={}", entry.cell["k"], entry.cell["dlc"]),
                value["bankruptcy_rate"].as_f64().unwrap_or(f64::NAN),
            ),
            Scenario::Lemon => (
                format!(
                    "K={} rep_visible={}",
                    entry.cell["K"], entry.cell["rep_visible"]
                ),
                value["sybil_revenue_share"].as_f64().unwrap_or(f64::NAN),
            ),
        };
        let slot = cells.entry(label).or_insert((0.0, 0));
        slot.0 += headline;
        slot.1 += 1;
    }
    let headline_name = match full.plan.scenario {
        Scenario::Crash => "mean bankruptcy rate",
        Scenario::Lemon => "mean sybil revenue share",
    };
    println!("cell summary ({headline_name}, over seeds):");
    for (label, (sum, n)) in cells {
        println!("  {label}: {:.4}  (n={n})", sum / n as f64);
    }
}
