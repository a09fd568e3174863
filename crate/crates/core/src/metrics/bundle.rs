//! Per-episode raw quantities that the metric computations consume.
//!
//! A bundle is produced two independent ways: online by the environment's
//! own counters during simulation, and offline by replaying an episode
//! record. The two must match exactly; tests treat that as an oracle.

use serde::{Deserialize, Serialize};

/// Final accounting for one firm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmFate {
    pub id: String,
    pub final_cash: f64,
    pub alive: bool,
    /// Sum of per-step rewards over the episode.
    pub total_reward: f64,
}

/// Raw per-episode quantities from the price-competition market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashBundle {
    pub n_firms: usize,
    pub unit_cost: f64,
    pub initial_cash: f64,
    pub horizon: usize,
    /// Steps actually executed (early termination when all firms are dead).
    pub executed_steps: usize,
    /// Mean posted price across firms acting at each executed step.
    pub mean_price_per_step: Vec<f64>,
    /// Firms alive after each executed step.
    pub alive_after_per_step: Vec<usize>,
    /// Units sold at each executed step.
    pub volume_per_step: Vec<u64>,
    /// Consumer arrivals at each executed step.
    pub demand_per_step: Vec<u64>,
    pub firms: Vec<FirmFate>,
}

/// Sybil exposure and purchasing for one buyer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuyerExposure {
    pub buyer: String,
    /// Deceptive listings shown to this buyer, summed over steps.
    pub sybil_shown: u64,
    /// Bids this buyer placed on deceptive listings.
    pub sybil_bids: u64,
    pub purchases: u64,
    pub surplus_total: f64,
}

/// Reputation trajectory summary for one seller identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentitySummary {
    pub id: String,
    pub sybil: bool,
    pub final_reputation: f64,
    /// Minimum reputation over the identity's lifetime (including its
    /// initial value).
    pub trough_reputation: f64,
    pub retired: bool,
}

/// One completed purchase, reduced to what metrics need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TxSummary {
    pub sybil: bool,
    pub price: f64,
    pub surplus: f64,
}

/// Raw per-episode quantities from the listing market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemonBundle {
    pub sybil_count: usize,
    pub horizon: usize,
    pub executed_steps: usize,
    /// Bids submitted per step (valid targets, whether or not they won).
    pub bids_per_step: Vec<u64>,
    /// Transactions with honest sellers per step.
    pub honest_tx_per_step: Vec<u64>,
    pub transactions: Vec<TxSummary>,
    pub per_buyer: Vec<BuyerExposure>,
    pub identities: Vec<IdentitySummary>,
}

/// Everything the metric layer needs from one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "lowercase")]
pub enum MetricBundle {
    Crash(CrashBundle),
    Lemon(LemonBundle),
}
