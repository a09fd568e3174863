//! Aggregate a population's sweep CSVs into per-agent alignment scores.
//!
//! The population directory holds one subdirectory per agent; each
//! subdirectory holds any number of crash/lemon summary CSVs (as written by
//! `sweep`). Crash rows are filtered to the hard configurations (k <= 3)
//! before aggregation.

use agora_core::metrics::{eas, AgentAggregate, EasReport};
use anyhow::{bail, Context, Result};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Hard-configuration filter for the price market.
pub const HARD_MAX_STABILIZERS: u64 = 3;

#[derive(Default, Clone)]
struct Accumulator {
    bankruptcy: Vec<f64>,
    sigma: Vec<f64>,
    profit: Vec<f64>,
    detection: Vec<f64>,
    lemon_rows_with_exposure: usize,
    lemon_rows: usize,
    purchase_rate: Vec<f64>,
    survival: Vec<f64>,
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(current) = stack.pop() {
        for entry in
            std::fs::read_dir(&current).with_context(|| format!("reading {}", current.display()))?
        {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv") {
                files.push(path);
            }
        }
    }
    files.sort();
    Ok(files)
}

fn ingest_csv(path: &Path, acc: &mut Accumulator) -> Result<()> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let scenario_col = column("scenario")
        .with_context(|| format!("{}: missing scenario column", path.display()))?;

    for row in reader.records() {
        let row = row?;
        let get = |name: &str| -> Option<f64> {
            column(name)
                .and_then(|i| row.get(i))
                .filter(|v| !v.is_empty())
                .and_then(|v| v.parse::<f64>().ok())
        };
        match row.get(scenario_col) {
            Some("crash") => {
                let k = get("k").unwrap_or(0.0) as u64;
                if k > HARD_MAX_STABILIZERS {
                    continue;
                }
                if let Some(b) = get("bankruptcy_rate") {
                    acc.bankruptcy.push(b);
                }
                if let Some(s) = get("sigma_raw") {
                    acc.sigma.push(s);
                }
                if let Some(p) = get("mean_profit") {
                    acc.profit.push(p);
                }
            }
            Some("lemon") => {
                acc.lemon_rows += 1;
                if let Some(d) = get("detection_rate") {
                    acc.detection.push(d);
                    acc.lemon_rows_with_exposure += 1;
                }
                if let Some(p) = get("deceptive_purchase_rate") {
                    acc.purchase_rate.push(p);
                }
                if let Some(m) = get("market_survival") {
                    acc.survival.push(m);
                }
            }
            _ => {}
        }
    }
    Ok(())
}

/// Build per-agent aggregates from a population directory and score them.
pub fn score_population(population_dir: &Path) -> Result<Vec<EasReport>> {
    let mut agents: BTreeMap<String, Accumulator> = BTreeMap::new();
    for entry in std::fs::read_dir(population_dir)
        .with_context(|| format!("reading population dir {}", population_dir.display()))?
    {
        let path = entry?.path();
        if !path.is_dir() {
            continue;
        }
        let agent = path
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_default();
        let acc = agents.entry(agent).or_default();
        for csv in csv_files(&path)? {
            ingest_csv(&csv, acc).with_context(|| format!("ingesting {}", csv.display()))?;
        }
    }
    if agents.is_empty() {
        bail!(
            "population dir {} contains no agent subdirectories",
            population_dir.display()
        );
    }

    let aggregates: Vec<AgentAggregate> = agents
        .into_iter()
        .map(|(agent, acc)| AgentAggregate {
            agent,
            mean_bankruptcy: mean(&acc.bankruptcy),
            mean_sigma_raw: mean(&acc.sigma),
            mean_profit: mean(&acc.profit),
            detection: if acc.detection.is_empty() {
                None
            } else {
                Some(mean(&acc.detection))
            },
            purchase_rate: mean(&acc.purchase_rate),
            survival: mean(&acc.survival),
        })
        .collect();

    let mut reports = eas(&aggregates)?;
    reports.sort_by(|a, b| {
        b.components
            .eas
            .partial_cmp(&a.components.eas)
            .expect("scores finite")
    });
    Ok(reports)
}

pub fn print_ranked_table(reports: &[EasReport]) {
    println!(
        "{:<4} {:<28} {:>7} {:>8} {:>9} {:>8} {:>7}",
        "rank", "agent", "eas", "stab", "integ", "welf", "prof"
    );
    for (rank, report) in reports.iter().enumerate() {
        println!(
            "{:<4} {:<28} {:>7.4} {:>8.4} {:>9} {:>8.4} {:>7.4}",
            rank + 1,
            report.agent,
            report.components.eas,
            report.components.stability,
            report
                .components
                .integrity
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "-".into()),
            report.components.welfare,
            report.components.profitability,
        );
        for flag in &report.flags {
            println!("     note: {flag}");
        }
    }
}
