//! Small trainable softmax policies over candidate actions.
//!
//! Both market heads reduce to one structure: a softmax over candidate
//! scores, each score a dot product of a shared weight vector with a
//! candidate feature vector. The firm head discretizes (price, buy) onto a
//! grid with one weight block per grid cell; the buyer head scores each
//! visible listing with shared weights plus a learned pass option.

use crate::agents::infer_claimed_tier;
use crate::crash::{CrashConfig, FirmAction, FirmObservation, PRICE_FLOOR};
use crate::engine::{Action, Observation, Policy, PolicyError};
use crate::lemon::{BuyerAction, BuyerObservation, LemonConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::{Arc, Mutex};

/// Smallest admissible action probability in the sampling distribution.
pub const PROB_FLOOR: f64 = 1e-8;

/// Candidate features for one decision point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CandidateSet {
    /// One feature vector per candidate, scored with shared weights.
    PerCandidate(Vec<Vec<f64>>),
    /// One shared feature vector; candidate `a` is scored by weight block
    /// `a` (weights laid out as `n_actions` contiguous blocks).
    Blocked {
        features: Vec<f64>,
        n_actions: usize,
    },
}

impl CandidateSet {
    pub fn n_candidates(&self) -> usize {
        match self {
            CandidateSet::PerCandidate(c) => c.len(),
            CandidateSet::Blocked { n_actions, .. } => *n_actions,
        }
    }

    pub fn weight_dim(&self) -> usize {
        match self {
            CandidateSet::PerCandidate(c) => c.first().map(|v| v.len()).unwrap_or(0),
            CandidateSet::Blocked {
                features,
                n_actions,
            } => features.len() * n_actions,
        }
    }

    pub fn scores(&self, weights: &[f64]) -> Vec<f64> {
        match self {
            CandidateSet::PerCandidate(candidates) => candidates
                .iter()
                .map(|psi| psi.iter().zip(weights).map(|(x, w)| x * w).sum())
                .collect(),
            CandidateSet::Blocked {
                features,
                n_actions,
            } => {
                let d = features.len();
                (0..*n_actions)
                    .map(|a| {
                        weights[a * d..(a + 1) * d]
                            .iter()
                            .zip(features)
                            .map(|(w, x)| w * x)
                            .sum()
                    })
                    .collect()
            }
        }
    }

    /// Accumulate `coeff * d(log pi(chosen))/d(weights)` into `grad`.
    /// The gradient of a linear-softmax log probability is the chosen
    /// candidate's features minus the probability-weighted mean features.
    pub fn accumulate_grad_log_prob(
        &self,
        chosen: usize,
        probs: &[f64],
        coeff: f64,
        grad: &mut [f64],
    ) {
        match self {
            CandidateSet::PerCandidate(candidates) => {
                for (j, x) in candidates[chosen].iter().enumerate() {
                    grad[j] += coeff * x;
                }
                for (i, psi) in candidates.iter().enumerate() {
                    let w = coeff * probs[i];
                    for (j, x) in psi.iter().enumerate() {
                        grad[j] -= w * x;
                    }
                }
            }
            CandidateSet::Blocked {
                features,
                n_actions,
            } => {
                let d = features.len();
                for (j, x) in features.iter().enumerate() {
                    grad[chosen * d + j] += coeff * x;
                }
                for a in 0..*n_actions {
                    let w = coeff * probs[a];
                    for (j, x) in features.iter().enumerate() {
                        grad[a * d + j] -= w * x;
                    }
                }
            }
        }
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln() + max;
    scores.iter().map(|s| s - log_sum).collect()
}

/// Sampling distribution: softmax with every probability floored at
/// [`PROB_FLOOR`] and renormalized, so no action is ever impossible.
pub fn floored_probabilities(scores: &[f64]) -> Vec<f64> {
    let logs = log_softmax(scores);
    let mut probs: Vec<f64> = logs.iter().map(|l| l.exp().max(PROB_FLOOR)).collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    probs
}

pub fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// One recorded decision of a trained policy during rollout.
#[derive(Debug, Clone)]
pub struct TrajStep {
    pub candidates: CandidateSet,
    pub chosen: usize,
}

pub type TrajectoryRecorder = Arc<Mutex<Vec<TrajStep>>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrashHead {
    pub unit_cost: f64,
    pub demand_per_firm: f64,
    pub initial_cash: f64,
    /// Price grid as multiples of unit cost.
    pub price_multipliers: Vec<f64>,
    /// Buy grid as multiples of the per-firm demand share.
    pub buy_multipliers: Vec<f64>,
}

impl CrashHead {
    pub fn feature_dim() -> usize {
        7
    }

    pub fn n_actions(&self) -> usize {
        self.price_multipliers.len() * self.buy_multipliers.len()
    }

    fn features(&self, obs: &FirmObservation) -> Vec<f64> {
        let min_comp = obs
            .competitor_prices
            .iter()
            .copied()
            .fold(None::<f64>, |acc, p| Some(acc.map_or(p, |m| m.min(p))));
        let mean_comp = if obs.competitor_prices.is_empty() {
            None
        } else {
            Some(obs.competitor_prices.iter().sum::<f64>() / obs.competitor_prices.len() as f64)
        };
        let last = obs.history.last();
        vec![
            1.0,
            obs.cash / self.initial_cash.max(1e-9),
            obs.inventory as f64 / self.demand_per_firm.max(1e-9),
            min_comp.map_or(0.0, |p| p / self.unit_cost),
            mean_comp.map_or(0.0, |p| p / self.unit_cost),
            last.map_or(0.0, |h| h.price_set / self.unit_cost),
            last.map_or(0.0, |h| {
                h.units_sold as f64 / self.demand_per_firm.max(1e-9)
            }),
        ]
    }

    fn action(&self, index: usize) -> FirmAction {
        let n_buy = self.buy_multipliers.len();
        let price_mult = self.price_multipliers[index / n_buy];
        let buy_mult = self.buy_multipliers[index % n_buy];
        FirmAction {
            price: (price_mult * self.unit_cost).max(PRICE_FLOOR),
            buy_quantity: (buy_mult * self.demand_per_firm).round() as u64,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LemonHead {
    pub max_value: f64,
    /// Reputation assumed when the market hides it.
    pub default_reputation: f64,
}

impl LemonHead {
    pub fn feature_dim() -> usize {
        8
    }

    fn candidates(&self, obs: &BuyerObservation) -> Vec<Vec<f64>> {
        let prior_quality = obs.mean_quality.unwrap_or(0.55);
        let mut out: Vec<Vec<f64>> = obs
            .listings
            .iter()
            .map(|view| {
                let claimed = infer_claimed_tier(&view.description, view.price);
                let (bracket_rel, claimed_value, est_surplus) = match claimed {
                    Some(tier) => {
                        let (lo, hi) = tier.bracket();
                        let mid = (lo + hi) / 2.0;
                        let half = (hi - lo) / 2.0;
                        (
                            (view.price - mid) / half,
                            tier.value(),
                            (tier.value() * self.max_value - view.price) / self.max_value,
                        )
                    }
                    None => (0.0, 0.0, -view.price / self.max_value),
                };
                vec![
                    1.0,
                    0.0,
                    view.price / self.max_value,
                    bracket_rel,
                    view.reputation.unwrap_or(self.default_reputation),
                    est_surplus,
                    prior_quality,
                    claimed_value,
                ]
            })
            .collect();
        // The pass option.
        out.push(vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, prior_quality, 0.0]);
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "lowercase")]
pub enum Head {
    Crash(CrashHead),
    Lemon(LemonHead),
}

/// A trainable policy: shared-weight softmax over candidate actions.
pub struct ParametricPolicy {
    pub head: Head,
    pub weights: Vec<f64>,
    recorder: Option<TrajectoryRecorder>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    config_hash: String,
    head: Head,
    weights: Vec<f64>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
}

impl ParametricPolicy {
    pub fn new_crash(config: &CrashConfig) -> Self {
        let head = CrashHead {
            unit_cost: config.unit_cost,
            demand_per_firm: config.demand_rate() / config.n_firms as f64,
            initial_cash: config.initial_cash,
            price_multipliers: vec![0.6, 0.8, 1.0, 1.2, 1.5, 2.0, 3.0],
            buy_multipliers: vec![0.0, 0.5, 1.0, 1.5, 2.0],
        };
        let dim = head.n_actions() * CrashHead::feature_dim();
        Self {
            head: Head::Crash(head),
            weights: vec![0.0; dim],
            recorder: None,
        }
    }

    pub fn new_lemon(config: &LemonConfig) -> Self {
        let head = LemonHead {
            max_value: config.max_value,
            default_reputation: config.initial_reputation,
        };
        Self {
            head: Head::Lemon(head),
            weights: vec![0.0; LemonHead::feature_dim()],
            recorder: None,
        }
    }

    /// A rollout copy sharing current weights and writing its decisions
    /// into `recorder`.
    pub fn rollout_copy(&self, recorder: TrajectoryRecorder) -> Self {
        Self {
            head: self.head.clone(),
            weights: self.weights.clone(),
            recorder: Some(recorder),
        }
    }

    pub fn candidates(&self, obs: &Observation) -> Result<CandidateSet, PolicyError> {
        match (&self.head, obs) {
            (Head::Crash(head), Observation::Crash(o)) => Ok(CandidateSet::Blocked {
                features: head.features(o),
                n_actions: head.n_actions(),
            }),
            (Head::Lemon(head), Observation::Lemon(o)) => {
                Ok(CandidateSet::PerCandidate(head.candidates(o)))
            }
            _ => Err(PolicyError::Malformed(
                "parametric policy scenario does not match observation".into(),
            )),
        }
    }

    pub fn action_for(&self, obs: &Observation, index: usize) -> Result<Action, PolicyError> {
        match (&self.head, obs) {
            (Head::Crash(head), Observation::Crash(_)) => Ok(Action::Crash(head.action(index))),
            (Head::Lemon(_), Observation::Lemon(o)) => {
                if index < o.listings.len() {
                    Ok(Action::Lemon(BuyerAction::Bid {
                        listing_id: o.listings[index].listing_id.clone(),
                    }))
                } else {
                    Ok(Action::Lemon(BuyerAction::Pass))
                }
            }
            _ => Err(PolicyError::Malformed(
                "parametric policy scenario does not match observation".into(),
            )),
        }
    }

    pub fn save(&self, path: &Path, config_hash: &str) -> Result<(), CheckpointError> {
        let checkpoint = Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.to_string(),
            head: self.head.clone(),
            weights: self.weights.clone(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&checkpoint)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = std::fs::read_to_string(path)?;
        let checkpoint: Checkpoint = serde_json::from_str(&text)?;
        if checkpoint.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(checkpoint.version));
        }
        Ok(Self {
            head: checkpoint.head,
            weights: checkpoint.weights,
            recorder: None,
        })
    }
}

impl Policy for ParametricPolicy {
    fn kind(&self) -> &'static str {
        "parametric"
    }

    fn act(&mut self, obs: &Observation, rng: &mut ChaCha8Rng) -> Result<Action, PolicyError> {
        let candidates = self.candidates(obs)?;
        let scores = candidates.scores(&self.weights);
        let probs = floored_probabilities(&scores);
        let chosen = sample_index(&probs, rng);
        if let Some(recorder) = &self.recorder {
            recorder.lock().expect("recorder lock").push(TrajStep {
                candidates: candidates.clone(),
                chosen,
            });
        }
        self.action_for(obs, chosen)
    }
}
