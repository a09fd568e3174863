//! Build environments and rosters from configuration and execute single
//! episodes.

use agora_core::agents::llm::LlmConfig;
use agora_core::agents::{build_buyer_policy, build_firm_policy};
use agora_core::config::{FullConfig, RosterConfig};
use agora_core::crash::{CrashConfig, CrashMarket};
use agora_core::engine::{run_episode, EngineOptions, EpisodeRecord, PolicyHandle, Scenario};
use agora_core::lemon::{LemonConfig, LemonMarket};
use agora_core::metrics::{crash_metrics, lemon_metrics, MetricBundle};
use anyhow::{Context, Result};

/// One finished episode with its metrics, ready for persistence.
pub struct RunResult {
    pub record: EpisodeRecord,
    pub bundle: MetricBundle,
    pub metrics_json: serde_json::Value,
}

pub fn crash_rosters(
    config: &CrashConfig,
    roster: &RosterConfig,
    llm: Option<&LlmConfig>,
) -> Result<Vec<PolicyHandle>> {
    (0..config.n_firms)
        .map(|slot| {
            let spec = if slot < config.stabilizing_firms {
                &roster.stabilizer
            } else {
                &roster.firm
            };
            Ok(PolicyHandle::new(
                format!("firm_{slot}"),
                build_firm_policy(spec, config, llm)
                    .with_context(|| format!("building policy for firm_{slot}"))?,
            ))
        })
        .collect()
}

pub fn buyer_rosters(
    config: &LemonConfig,
    roster: &RosterConfig,
    llm: Option<&LlmConfig>,
) -> Result<Vec<PolicyHandle>> {
    (0..config.n_buyers)
        .map(|slot| {
            Ok(PolicyHandle::new(
                format!("buyer_{slot}"),
                build_buyer_policy(&roster.buyer, config, llm)
                    .with_context(|| format!("building policy for buyer_{slot}"))?,
            ))
        })
        .collect()
}

/// Execute one episode of the configured scenario at the given seed.
pub fn execute(
    full: &FullConfig,
    scenario: Scenario,
    crash_config: &CrashConfig,
    lemon_config: &LemonConfig,
    seed: u64,
) -> Result<RunResult> {
    let options = EngineOptions {
        log_observations: full.plan.log_observations,
        parallel_policies: full.llm.parallelism.max(1),
    };
    let llm = Some(&full.llm);
    match scenario {
        Scenario::Crash => {
            let mut env = CrashMarket::new(crash_config.clone());
            let mut roster = crash_rosters(crash_config, &full.plan.roster, llm)?;
            let output = run_episode(&mut env, &mut roster, seed, &options)?;
            let MetricBundle::Crash(bundle) = &output.bundle else {
                unreachable!()
            };
            let metrics = crash_metrics(bundle);
            Ok(RunResult {
                metrics_json: serde_json::to_value(&metrics)?,
                bundle: output.bundle,
                record: output.record,
            })
        }
        Scenario::Lemon => {
            let mut env = LemonMarket::new(lemon_config.clone(), seed);
            let mut roster = buyer_rosters(lemon_config, &full.plan.roster, llm)?;
            let output = run_episode(&mut env, &mut roster, seed, &options)?;
            let MetricBundle::Lemon(bundle) = &output.bundle else {
                unreachable!()
            };
            let metrics = lemon_metrics(bundle);
            Ok(RunResult {
                metrics_json: serde_json::to_value(&metrics)?,
                bundle: output.bundle,
                record: output.record,
            })
        }
    }
}
