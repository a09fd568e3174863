//! Rebuild per-episode metric bundles from a serialized record, fully
//! independent of the environments' online counters. Tests pin the two
//! paths against each other.

use super::record::{EpisodeRecord, RecordError, Scenario, StepData};
use crate::crash::CrashConfig;
use crate::lemon::{BuyerAction, LemonConfig, Vote};
use crate::metrics::bundle::{
    BuyerExposure, CrashBundle, FirmFate, IdentitySummary, LemonBundle, MetricBundle, TxSummary,
};
use std::collections::{BTreeMap, HashMap, VecDeque};

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("header config does not parse as a {scenario} config: {detail}")]
    BadConfig { scenario: Scenario, detail: String },
    #[error("event {index} carries step data for the wrong scenario")]
    WrongScenario { index: usize },
    #[error("event {index} references unknown agent {agent}")]
    UnknownAgent { index: usize, agent: String },
}

/// Recompute every raw metric quantity from a complete record.
pub fn replay_metrics(record: &EpisodeRecord) -> Result<MetricBundle, ReplayError> {
    match record.header.scenario {
        Scenario::Crash => replay_crash(record).map(MetricBundle::Crash),
        Scenario::Lemon => replay_lemon(record).map(MetricBundle::Lemon),
    }
}

fn replay_crash(record: &EpisodeRecord) -> Result<CrashBundle, ReplayError> {
    let config: CrashConfig =
        serde_json::from_value(record.header.config.clone()).map_err(|e| {
            ReplayError::BadConfig {
                scenario: Scenario::Crash,
                detail: e.to_string(),
            }
        })?;

    let firm_ids: Vec<String> = record
        .header
        .roster
        .iter()
        .map(|r| r.agent_id.clone())
        .collect();
    let mut rewards: BTreeMap<String, f64> = BTreeMap::new();
    let mut last_snapshot: HashMap<String, (f64, bool)> = HashMap::new();

    let mut mean_price_per_step = Vec::new();
    let mut alive_after_per_step = Vec::new();
    let mut volume_per_step = Vec::new();
    let mut demand_per_step = Vec::new();

    for (index, event) in record.events.iter().enumerate() {
        let data = match &event.data {
            StepData::Crash(d) => d,
            StepData::Lemon(_) => return Err(ReplayError::WrongScenario { index }),
        };
        let acted = &data.firms;
        let mean_price = acted.iter().map(|f| f.price).sum::<f64>() / acted.len().max(1) as f64;
        mean_price_per_step.push(mean_price);
        alive_after_per_step.push(acted.iter().filter(|f| f.alive).count());
        volume_per_step.push(data.transactions.iter().map(|t| t.quantity).sum());
        demand_per_step.push(data.demand);
        for snap in acted {
            if !firm_ids.contains(&snap.agent_id) {
                return Err(ReplayError::UnknownAgent {
                    index,
                    agent: snap.agent_id.clone(),
                });
            }
            last_snapshot.insert(snap.agent_id.clone(), (snap.cash, snap.alive));
        }
        for entry in &event.rewards {
            *rewards.entry(entry.agent_id.clone()).or_insert(0.0) += entry.reward;
        }
    }

    let firms = firm_ids
        .iter()
        .map(|id| {
            let (final_cash, alive) = last_snapshot
                .get(id)
                .copied()
                .unwrap_or((config.initial_cash, true));
            FirmFate {
                id: id.clone(),
                final_cash,
                alive,
                total_reward: rewards.get(id).copied().unwrap_or(0.0),
            }
        })
        .collect();

    Ok(CrashBundle {
        n_firms: config.n_firms,
        unit_cost: config.unit_cost,
        initial_cash: config.initial_cash,
        horizon: config.horizon,
        executed_steps: record.events.len(),
        mean_price_per_step,
        alive_after_per_step,
        volume_per_step,
        demand_per_step,
        firms,
    })
}

struct ReplayIdentity {
    sybil: bool,
    votes: VecDeque<bool>,
    trough: f64,
    retired: bool,
}

impl ReplayIdentity {
    fn reputation(&self, config: &LemonConfig) -> f64 {
        if self.votes.is_empty() {
            config.initial_reputation
        } else {
            self.votes.iter().filter(|&&v| v).count() as f64 / self.votes.len() as f64
        }
    }
}

fn replay_lemon(record: &EpisodeRecord) -> Result<LemonBundle, ReplayError> {
    let config: LemonConfig =
        serde_json::from_value(record.header.config.clone()).map_err(|e| {
            ReplayError::BadConfig {
                scenario: Scenario::Lemon,
                detail: e.to_string(),
            }
        })?;

    // Seller identities start from the procedural roster; rotations add
    // fresh ones. Insertion order matches the environment's creation order.
    let mut identity_order: Vec<String> = Vec::new();
    let mut identities: HashMap<String, ReplayIdentity> = HashMap::new();
    for entry in &record.header.roster {
        let sybil = match entry.policy.as_str() {
            "sybil_seller" => true,
            "honest_seller" => false,
            _ => continue,
        };
        identity_order.push(entry.agent_id.clone());
        identities.insert(
            entry.agent_id.clone(),
            ReplayIdentity {
                sybil,
                votes: VecDeque::new(),
                trough: config.initial_reputation,
                retired: false,
            },
        );
    }

    // Buyers in acting order, from the first event.
    let buyer_ids: Vec<String> = record
        .events
        .first()
        .map(|e| e.observations.iter().map(|o| o.agent_id.clone()).collect())
        .unwrap_or_default();
    let mut exposures: BTreeMap<String, BuyerExposure> = buyer_ids
        .iter()
        .map(|id| {
            (
                id.clone(),
                BuyerExposure {
                    buyer: id.clone(),
                    sybil_shown: 0,
                    sybil_bids: 0,
                    purchases: 0,
                    surplus_total: 0.0,
                },
            )
        })
        .collect();

    let mut listing_sybil: HashMap<String, bool> = HashMap::new();
    let mut bids_per_step = Vec::new();
    let mut honest_tx_per_step = Vec::new();
    let mut transactions = Vec::new();

    for (index, event) in record.events.iter().enumerate() {
        let data = match &event.data {
            StepData::Lemon(d) => d,
            StepData::Crash(_) => return Err(ReplayError::WrongScenario { index }),
        };
        for listing in &data.new_listings {
            listing_sybil.insert(listing.listing_id.clone(), listing.sybil);
        }
        for shown in &data.shown {
            let exposure =
                exposures
                    .get_mut(&shown.buyer)
                    .ok_or_else(|| ReplayError::UnknownAgent {
                        index,
                        agent: shown.buyer.clone(),
                    })?;
            exposure.sybil_shown += shown
                .listing_ids
                .iter()
                .filter(|id| listing_sybil.get(*id).copied().unwrap_or(false))
                .count() as u64;
        }

        let mut bids = 0u64;
        for action in &event.actions {
            let parsed: Result<crate::engine::Action, _> =
                serde_json::from_value(action.action.clone());
            if let Ok(crate::engine::Action::Lemon(BuyerAction::Bid { listing_id })) = parsed {
                bids += 1;
                if listing_sybil.get(&listing_id).copied().unwrap_or(false) {
                    if let Some(exposure) = exposures.get_mut(&action.agent_id) {
                        exposure.sybil_bids += 1;
                    }
                }
            }
        }
        bids_per_step.push(bids);

        honest_tx_per_step.push(data.transactions.iter().filter(|t| !t.sybil).count() as u64);
        for tx in &data.transactions {
            transactions.push(TxSummary {
                sybil: tx.sybil,
                price: tx.price,
                surplus: tx.surplus,
            });
            if let Some(exposure) = exposures.get_mut(&tx.buyer) {
                exposure.purchases += 1;
                exposure.surplus_total += tx.surplus;
            }
        }

        for vote in &data.votes {
            let identity =
                identities
                    .get_mut(&vote.seller_id)
                    .ok_or_else(|| ReplayError::UnknownAgent {
                        index,
                        agent: vote.seller_id.clone(),
                    })?;
            let up = match vote.vote {
                Vote::Up => Some(true),
                Vote::Down => Some(false),
                Vote::Abstain => None,
            };
            if let Some(up) = up {
                if identity.votes.len() == config.vote_window {
                    identity.votes.pop_front();
                }
                identity.votes.push_back(up);
                let rep = identity.reputation(&config);
                if rep < identity.trough {
                    identity.trough = rep;
                }
            }
        }
        for rotation in &data.rotations {
            if let Some(identity) = identities.get_mut(&rotation.retired) {
                identity.retired = true;
            }
            identity_order.push(rotation.activated.clone());
            identities.insert(
                rotation.activated.clone(),
                ReplayIdentity {
                    sybil: true,
                    votes: VecDeque::new(),
                    trough: config.initial_reputation,
                    retired: false,
                },
            );
        }
    }

    let identity_summaries = identity_order
        .iter()
        .map(|id| {
            let identity = &identities[id];
            IdentitySummary {
                id: id.clone(),
                sybil: identity.sybil,
                final_reputation: identity.reputation(&config),
                trough_reputation: identity.trough,
                retired: identity.retired,
            }
        })
        .collect();

    Ok(LemonBundle {
        sybil_count: config.sybil_count,
        horizon: config.horizon,
        executed_steps: record.events.len(),
        bids_per_step,
        honest_tx_per_step,
        transactions,
        per_buyer: buyer_ids.iter().map(|id| exposures[id].clone()).collect(),
        identities: identity_summaries,
    })
}
