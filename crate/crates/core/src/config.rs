//! Hierarchical JSON configuration: sections {crash, lemon, llm, rl, plan}.
//! Unset fields take the documented defaults; unknown keys are hard errors.

use crate::agents::llm::LlmConfig;
use crate::agents::PolicySpec;
use crate::crash::CrashConfig;
use crate::engine::Scenario;
use crate::lemon::LemonConfig;
use crate::rl::TrainerConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Grid axes for the two ablation sweeps.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Stabilizing-firm counts swept in the price market.
    pub crash_k: Vec<usize>,
    /// Consumer discovery limits swept in the price market.
    pub crash_dlc: Vec<usize>,
    /// Deceptive-cluster sizes swept in the listing market.
    pub lemon_k: Vec<usize>,
    /// Reputation-visibility arms swept in the listing market.
    pub lemon_rep_visible: Vec<bool>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            crash_k: vec![0, 1, 3, 5],
            crash_dlc: vec![1, 3, 5],
            lemon_k: vec![0, 3, 6, 9],
            lemon_rep_visible: vec![true, false],
        }
    }
}

/// Roster template: which policy fills the base firm slots (stabilizing
/// slots always use the stabilizing harness) and which fills buyer slots.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RosterConfig {
    pub firm: PolicySpec,
    pub buyer: PolicySpec,
    pub stabilizer: PolicySpec,
}

impl Default for RosterConfig {
    fn default() -> Self {
        Self {
            firm: PolicySpec::GreedyUndercutter { epsilon: 0.01 },
            buyer: PolicySpec::RandomBuyer,
            stabilizer: PolicySpec::StabilizingFirm {
                margin: 0.2,
                target_multiplier: 1.5,
            },
        }
    }
}

/// Experiment plan: scenario, sweep grid, seeds, roster, output knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanConfig {
    pub scenario: Scenario,
    /// Label used for the population column in summary CSVs.
    pub agent: Option<String>,
    /// Seed for single `run` invocations.
    pub seed: u64,
    /// Seeds for sweep cells.
    pub seeds: Vec<u64>,
    pub grid: GridConfig,
    pub roster: RosterConfig,
    /// Episode length for sweeps; `None` uses 365 (crash) or 50 (lemon).
    pub sweep_horizon: Option<usize>,
    /// Log full observation content into episode records.
    pub log_observations: bool,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Crash,
            agent: None,
            seed: 42,
            seeds: vec![8, 16, 64],
            grid: GridConfig::default(),
            roster: RosterConfig::default(),
            sweep_horizon: None,
            log_observations: false,
        }
    }
}

impl PlanConfig {
    pub fn sweep_horizon_for(&self, scenario: Scenario) -> usize {
        self.sweep_horizon.unwrap_or(match scenario {
            Scenario::Crash => 365,
            Scenario::Lemon => 50,
        })
    }

    pub fn agent_label(&self) -> String {
        self.agent.clone().unwrap_or_else(|| match self.scenario {
            Scenario::Crash => self.roster.firm.kind_name().to_string(),
            Scenario::Lemon => self.roster.buyer.kind_name().to_string(),
        })
    }
}

/// Training section: shared optimizer settings plus per-scenario loop
/// shapes and the opponent roster.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlConfig {
    pub learning_rate: f64,
    pub beta: f64,
    pub normalize_advantages: bool,
    pub crash_batch_size: usize,
    pub crash_iterations: usize,
    pub crash_horizon: usize,
    pub lemon_batch_size: usize,
    pub lemon_iterations: usize,
    pub lemon_horizon: usize,
    pub reward_weights: crate::rl::LemonRewardWeights,
    pub divergence_patience: usize,
    /// Fixed opponent for non-stabilizing firm slots.
    pub crash_opponent: PolicySpec,
    /// Fixed base buyer for non-trained buyer slots.
    pub lemon_base_buyer: PolicySpec,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            beta: 0.2,
            normalize_advantages: true,
            crash_batch_size: 32,
            crash_iterations: 27,
            crash_horizon: 32,
            lemon_batch_size: 16,
            lemon_iterations: 7,
            lemon_horizon: 40,
            reward_weights: crate::rl::LemonRewardWeights::default(),
            divergence_patience: 5,
            crash_opponent: PolicySpec::GreedyUndercutter { epsilon: 0.01 },
            lemon_base_buyer: PolicySpec::RandomBuyer,
        }
    }
}

impl RlConfig {
    pub fn trainer_for(&self, scenario: Scenario) -> TrainerConfig {
        let (batch_size, iterations, horizon) = match scenario {
            Scenario::Crash => (
                self.crash_batch_size,
                self.crash_iterations,
                self.crash_horizon,
            ),
            Scenario::Lemon => (
                self.lemon_batch_size,
                self.lemon_iterations,
                self.lemon_horizon,
            ),
        };
        TrainerConfig {
            learning_rate: self.learning_rate,
            beta: self.beta,
            normalize_advantages: self.normalize_advantages,
            batch_size,
            iterations,
            horizon,
            reward_weights: self.reward_weights,
            divergence_patience: self.divergence_patience,
        }
    }
}

/// The whole configuration file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FullConfig {
    pub crash: CrashConfig,
    pub lemon: LemonConfig,
    pub llm: LlmConfig,
    pub rl: RlConfig,
    pub plan: PlanConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config does not parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl FullConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: FullConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.crash.validate().map_err(ConfigError::Invalid)?;
        self.lemon.validate().map_err(ConfigError::Invalid)?;
        for &k in &self.plan.grid.crash_k {
            if k > self.crash.n_firms {
                return Err(ConfigError::Invalid(format!(
                    "plan.grid.crash_k entry {k} exceeds crash.N ({})",
                    self.crash.n_firms
                )));
            }
        }
        for &dlc in &self.plan.grid.crash_dlc {
            if dlc < 1 || dlc > self.crash.n_firms {
                return Err(ConfigError::Invalid(format!(
                    "plan.grid.crash_dlc entry {dlc} must satisfy 1 <= dlc <= crash.N ({})",
                    self.crash.n_firms
                )));
            }
        }
        for &k in &self.plan.grid.lemon_k {
            if k > self.lemon.n_sellers {
                return Err(ConfigError::Invalid(format!(
                    "plan.grid.lemon_k entry {k} exceeds lemon.S ({})",
                    self.lemon.n_sellers
                )));
            }
        }
        if self.plan.seeds.is_empty() {
            return Err(ConfigError::Invalid("plan.seeds must not be empty".into()));
        }
        Ok(())
    }
}

/// Load and validate a config file.
pub fn load_config(path: &Path) -> Result<FullConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    FullConfig::from_json(&text)
}

/// Stable short hash of any serializable config, for manifests and
/// checkpoints.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    hasher
        .finalize()
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_takes_all_defaults() {
        let config = FullConfig::from_json("{}").unwrap();
        assert_eq!(config.crash.n_firms, 5);
        assert_eq!(config.crash.n_consumers, 50);
        assert_eq!(config.crash.dlc, 3);
        assert_eq!(config.crash.initial_cash, 500.0);
        assert_eq!(config.crash.unit_cost, 1.0);
        assert_eq!(config.crash.overhead, 2.0);
        assert_eq!(config.crash.tax_rate, 0.05);
        assert_eq!(config.crash.horizon, 100);
        assert_eq!(config.crash.demand_rate(), 30.0);
        assert_eq!(config.crash.history_depth, 3);
        assert_eq!(config.lemon.n_sellers, 12);
        assert_eq!(config.lemon.dlc, 5);
        assert_eq!(config.lemon.initial_reputation, 0.8);
        assert_eq!(config.lemon.vote_window, 10);
        assert_eq!(config.lemon.rotation_threshold, 0.3);
        assert_eq!(config.lemon.horizon, 50);
        assert_eq!(config.plan.seeds, vec![8, 16, 64]);
        assert_eq!(config.plan.seed, 42);
    }

    #[test]
    fn dlc_above_firm_count_is_rejected() {
        let err = FullConfig::from_json(r#"{"crash": {"dlc": 7}}"#).unwrap_err();
        match err {
            ConfigError::Invalid(msg) => assert!(msg.contains("dlc"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lemon_cluster_within_sellers_is_valid() {
        let config = FullConfig::from_json(r#"{"lemon": {"K": 9}}"#).unwrap();
        assert_eq!(config.lemon.sybil_count, 9);
        assert_eq!(config.lemon.n_sellers, 12);
    }

    #[test]
    fn unknown_keys_are_hard_errors() {
        let err = FullConfig::from_json(r#"{"crash": {"NN": 5}}"#).unwrap_err();
        match err {
            ConfigError::Parse(e) => assert!(e.to_string().contains("NN"), "{e}"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(FullConfig::from_json(r#"{"lemons": {}}"#).is_err());
    }

    #[test]
    fn paper_symbol_keys_roundtrip() {
        let config = FullConfig::from_json(
            r#"{"crash": {"N": 6, "M": 40, "C0": 250.0, "tau": 0.01, "dlc": 2, "lambda": 12.0}}"#,
        )
        .unwrap();
        assert_eq!(config.crash.n_firms, 6);
        assert_eq!(config.crash.n_consumers, 40);
        assert_eq!(config.crash.initial_cash, 250.0);
        assert_eq!(config.crash.tax_rate, 0.01);
        assert_eq!(config.crash.demand_rate(), 12.0);
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = FullConfig::from_json("{}").unwrap();
        let b = FullConfig::from_json("{}").unwrap();
        assert_eq!(config_hash(&a.crash), config_hash(&b.crash));
        let c = FullConfig::from_json(r#"{"crash": {"N": 6, "dlc": 3}}"#).unwrap();
        assert_ne!(config_hash(&a.crash), config_hash(&c.crash));
    }

    #[test]
    fn trainer_sections_resolve_per_scenario() {
        let config = FullConfig::from_json("{}").unwrap();
        let crash = config.rl.trainer_for(Scenario::Crash);
        assert_eq!(crash.batch_size, 32);
        assert_eq!(crash.iterations, 27);
        assert_eq!(crash.horizon, 32);
        let lemon = config.rl.trainer_for(Scenario::Lemon);
        assert_eq!(lemon.batch_size, 16);
        assert_eq!(lemon.iterations, 7);
        assert_eq!(lemon.horizon, 40);
    }
}
