//! Training loops: batched rollouts against fixed opponents, episode-return
//! advantages, one gradient step per iteration, and a curriculum update.

use super::curriculum::{sample_mixture, CurriculumState};
use super::policy::{ParametricPolicy, TrajStep, TrajectoryRecorder};
use super::{compute_advantages, reinforcepp_loss, RlError};
use crate::agents::{build_buyer_policy, build_firm_policy, PolicySpec};
use crate::crash::{CrashConfig, CrashMarket};
use crate::engine::{run_episode, EngineOptions, PolicyHandle};
use crate::lemon::{LemonConfig, LemonMarket};
use crate::metrics::bundle::MetricBundle;
use crate::metrics::{crash_metrics, lemon_metrics};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

/// Weights of the listing-market training reward.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LemonRewardWeights {
    pub detection: f64,
    pub surplus: f64,
    pub health: f64,
}

impl Default for LemonRewardWeights {
    fn default() -> Self {
        Self {
            detection: 0.4,
            surplus: 0.3,
            health: 0.3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    /// Reference-penalty coefficient.
    pub beta: f64,
    pub normalize_advantages: bool,
    /// Episodes per iteration.
    pub batch_size: usize,
    pub iterations: usize,
    /// Episode length used during training.
    pub horizon: usize,
    pub reward_weights: LemonRewardWeights,
    /// Halt after this many consecutive iterations below the initial
    /// mean return.
    pub divergence_patience: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            beta: 0.2,
            normalize_advantages: true,
            batch_size: 32,
            iterations: 27,
            horizon: 32,
            reward_weights: LemonRewardWeights::default(),
            divergence_patience: 5,
        }
    }
}

impl TrainerConfig {
    /// Price-market training defaults: 27 iterations of 32 episodes over
    /// 32 steps.
    pub fn crash_default() -> Self {
        Self::default()
    }

    /// Listing-market training defaults: 7 iterations of 16 episodes over
    /// 40 steps.
    pub fn lemon_default() -> Self {
        Self {
            batch_size: 16,
            iterations: 7,
            horizon: 40,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrashIterStats {
    pub market_survival: f64,
    pub trained_survival: f64,
    pub stabilizer_survival: f64,
    pub competitor_survival: f64,
    pub mean_price: f64,
    pub mean_sigma: f64,
    pub health: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LemonIterStats {
    pub detection: f64,
    pub purchase_rate: f64,
    pub mean_surplus_norm: f64,
    pub mean_health: f64,
    pub honest_buy_rate: f64,
}

/// One training iteration for the log file (one JSON object per line).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub mean_return: f64,
    pub loss: f64,
    pub mean_penalty: f64,
    pub curriculum_stage: usize,
    pub mixture: BTreeMap<usize, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crash: Option<CrashIterStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lemon: Option<LemonIterStats>,
}

pub struct TrainOutcome {
    pub policy: ParametricPolicy,
    /// Frozen copy of the initial weights, the reference the penalty
    /// anchors to.
    pub reference_weights: Vec<f64>,
    pub log: Vec<IterationLog>,
    /// Set when the divergence guard fired.
    pub halted: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error("failed to build opponent policy: {0}")]
    Opponent(#[from] crate::agents::BuildError),
    #[error("engine error during rollout: {0}")]
    Engine(#[from] crate::engine::EngineError),
}

fn drain_recorder(recorder: &TrajectoryRecorder) -> Vec<TrajStep> {
    std::mem::take(&mut *recorder.lock().expect("recorder lock"))
}

struct DivergenceGuard {
    initial: Option<f64>,
    below: usize,
    patience: usize,
}

impl DivergenceGuard {
    fn new(patience: usize) -> Self {
        Self {
            initial: None,
            below: 0,
            patience,
        }
    }

    /// Returns a halt message when mean return has stayed below the first
    /// iteration's level for `patience` consecutive iterations.
    fn observe(&mut self, mean_return: f64) -> Option<String> {
        match self.initial {
            None => {
                self.initial = Some(mean_return);
                None
            }
            Some(initial) => {
                if mean_return < initial {
                    self.below += 1;
                    if self.below >= self.patience {
                        return Some(format!(
                            "mean return {mean_return:.4} below initial {initial:.4} for {} \
                             consecutive iterations",
                            self.below
                        ));
                    }
                } else {
                    self.below = 0;
                }
                None
            }
        }
    }
}

/// Market health proxy logged during price-market training.
fn crash_health(bankruptcy: f64, sigma: f64) -> f64 {
    (1.0 - bankruptcy) * (1.0 - sigma.min(1.0))
}

/// Train a firm policy: the learner occupies one stabilizing slot, scripted
/// stabilizers fill the rest of the curriculum's quota, and fixed opponents
/// fill the remaining slots.
pub fn train_crash(
    trainer: &TrainerConfig,
    base: &CrashConfig,
    opponent: &PolicySpec,
    seed: u64,
) -> Result<TrainOutcome, TrainError> {
    let mut config = base.clone();
    config.horizon = trainer.horizon;

    let mut policy = ParametricPolicy::new_crash(&config);
    let reference_weights = policy.weights.clone();
    let mut curriculum = CurriculumState::new_crash();
    let mut trainer_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7261696e);
    let mut guard = DivergenceGuard::new(trainer.divergence_patience);
    let mut log = Vec::new();
    let mut halted = None;

    for iteration in 0..trainer.iterations {
        let mut trajectories: Vec<Vec<TrajStep>> = Vec::new();
        let mut returns: Vec<f64> = Vec::new();
        let mut survival_sum = 0.0;
        let mut trained_alive = 0.0;
        let mut stabilizer_alive = (0.0_f64, 0.0_f64);
        let mut competitor_alive = (0.0_f64, 0.0_f64);
        let mut price_sum = 0.0;
        let mut sigma_sum = 0.0;
        let mut health_sum = 0.0;

        for _ in 0..trainer.batch_size {
            let stabilizing_slots = sample_mixture(&curriculum.mixture, &mut trainer_rng);
            let episode_seed: u64 = trainer_rng.gen();
            let mut episode_config = config.clone();
            episode_config.stabilizing_firms = stabilizing_slots;

            let recorder: TrajectoryRecorder = Arc::new(Mutex::new(Vec::new()));
            let mut roster: Vec<PolicyHandle> = Vec::new();
            roster.push(PolicyHandle::new(
                "firm_0",
                Box::new(policy.rollout_copy(recorder.clone())),
            ));
            for slot in 1..episode_config.n_firms {
                let spec = if slot < stabilizing_slots {
                    PolicySpec::StabilizingFirm {
                        margin: 0.2,
                        target_multiplier: 1.5,
                    }
                } else {
                    opponent.clone()
                };
                roster.push(PolicyHandle::new(
                    format!("firm_{slot}"),
                    build_firm_policy(&spec, &episode_config, None)?,
                ));
            }

            let mut env = CrashMarket::new(episode_config.clone());
            let output = run_episode(
                &mut env,
                &mut roster,
                episode_seed,
                &EngineOptions::default(),
            )?;
            let MetricBundle::Crash(bundle) = output.bundle else {
                unreachable!("crash env yields crash bundle")
            };

            let trained = &bundle.firms[0];
            let profit_norm =
                trained.total_reward / (trainer.horizon as f64 * config.overhead.max(1e-9));
            let survival_bonus = if trained.alive { 1.0 } else { 0.0 };
            returns.push(profit_norm + survival_bonus);
            trajectories.push(drain_recorder(&recorder));

            let alive = bundle.firms.iter().filter(|f| f.alive).count();
            survival_sum += alive as f64 / bundle.n_firms as f64;
            trained_alive += survival_bonus;
            for (slot, firm) in bundle.firms.iter().enumerate() {
                let bucket = if slot < stabilizing_slots {
                    &mut stabilizer_alive
                } else {
                    &mut competitor_alive
                };
                bucket.0 += if firm.alive { 1.0 } else { 0.0 };
                bucket.1 += 1.0;
            }
            let metrics = crash_metrics(&bundle);
            price_sum += bundle.mean_price_per_step.iter().sum::<f64>()
                / bundle.mean_price_per_step.len().max(1) as f64;
            sigma_sum += metrics.sigma_raw;
            health_sum += crash_health(metrics.bankruptcy_rate, metrics.sigma_raw);
        }

        let batch = trainer.batch_size as f64;
        let advantages = compute_advantages(&returns, trainer.normalize_advantages);
        let mut flat_steps = Vec::new();
        let mut flat_advantages = Vec::new();
        for (episode, trajectory) in trajectories.into_iter().enumerate() {
            for step in trajectory {
                flat_steps.push(step);
                flat_advantages.push(advantages.per_episode[episode]);
            }
        }
        let update = reinforcepp_loss(
            &policy.weights,
            &reference_weights,
            &flat_steps,
            &flat_advantages,
            trainer.beta,
        )?;
        for (w, g) in policy.weights.iter_mut().zip(update.grad.iter()) {
            *w -= trainer.learning_rate * g;
        }

        let mean_return = returns.iter().sum::<f64>() / batch;
        let survival = survival_sum / batch;
        curriculum.update_crash(survival);
        log.push(IterationLog {
            iteration,
            mean_return,
            loss: update.loss,
            mean_penalty: update.mean_penalty,
            curriculum_stage: curriculum.stage,
            mixture: curriculum.mixture.clone(),
            crash: Some(CrashIterStats {
                market_survival: survival,
                trained_survival: trained_alive / batch,
                stabilizer_survival: stabilizer_alive.0 / stabilizer_alive.1.max(1.0),
                competitor_survival: competitor_alive.0 / competitor_alive.1.max(1.0),
                mean_price: price_sum / batch,
                mean_sigma: sigma_sum / batch,
                health: health_sum / batch,
            }),
            lemon: None,
        });

        if let Some(message) = guard.observe(mean_return) {
            halted = Some(message);
            break;
        }
    }

    Ok(TrainOutcome {
        policy,
        reference_weights,
        log,
        halted,
    })
}

/// Train a buyer policy: the learner is one buyer among fixed base buyers,
/// with the deceptive-cluster size drawn from the curriculum each episode.
pub fn train_lemon(
    trainer: &TrainerConfig,
    base: &LemonConfig,
    base_buyer: &PolicySpec,
    seed: u64,
) -> Result<TrainOutcome, TrainError> {
    let mut config = base.clone();
    config.horizon = trainer.horizon;

    let mut policy = ParametricPolicy::new_lemon(&config);
    let reference_weights = policy.weights.clone();
    let mut curriculum = CurriculumState::new_lemon();
    let mut trainer_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c656d6f);
    let mut guard = DivergenceGuard::new(trainer.divergence_patience);
    let mut log = Vec::new();
    let mut halted = None;
    let weights = trainer.reward_weights;

    for iteration in 0..trainer.iterations {
        let mut trajectories: Vec<Vec<TrajStep>> = Vec::new();
        let mut returns: Vec<f64> = Vec::new();
        let mut detection_sum = 0.0;
        let mut purchase_rate_sum = 0.0;
        let mut surplus_sum = 0.0;
        let mut health_sum = 0.0;
        let mut honest_buy_sum = 0.0;

        for _ in 0..trainer.batch_size {
            let sybil_count = sample_mixture(&curriculum.mixture, &mut trainer_rng);
            let episode_seed: u64 = trainer_rng.gen();
            let mut episode_config = config.clone();
            episode_config.sybil_count = sybil_count.min(episode_config.n_sellers);

            let recorder: TrajectoryRecorder = Arc::new(Mutex::new(Vec::new()));
            let mut roster: Vec<PolicyHandle> = Vec::new();
            roster.push(PolicyHandle::new(
                "buyer_0",
                Box::new(policy.rollout_copy(recorder.clone())),
            ));
            for slot in 1..episode_config.n_buyers {
                roster.push(PolicyHandle::new(
                    format!("buyer_{slot}"),
                    build_buyer_policy(base_buyer, &episode_config, None)?,
                ));
            }

            let mut env = LemonMarket::new(episode_config.clone(), episode_seed);
            let output = run_episode(
                &mut env,
                &mut roster,
                episode_seed,
                &EngineOptions::default(),
            )?;
            let MetricBundle::Lemon(bundle) = output.bundle else {
                unreachable!("lemon env yields lemon bundle")
            };

            let trained = &bundle.per_buyer[0];
            // No deceptive exposure means nothing was missed.
            let detection = if trained.sybil_shown == 0 {
                1.0
            } else {
                1.0 - trained.sybil_bids as f64 / trained.sybil_shown as f64
            };
            let surplus_norm = (trained.surplus_total / episode_config.max_value).clamp(-1.0, 1.0);
            let total_tx = bundle.transactions.len();
            let honest_tx = bundle.transactions.iter().filter(|t| !t.sybil).count();
            let health = if total_tx == 0 {
                0.0
            } else {
                honest_tx as f64 / total_tx as f64
            };
            returns.push(
                weights.detection * detection
                    + weights.surplus * surplus_norm
                    + weights.health * health,
            );
            trajectories.push(drain_recorder(&recorder));

            detection_sum += detection;
            surplus_sum += surplus_norm;
            health_sum += health;
            let metrics = lemon_metrics(&bundle);
            purchase_rate_sum += metrics.deceptive_purchase_rate;
            honest_buy_sum += if bundle.executed_steps == 0 {
                0.0
            } else {
                honest_tx as f64 / bundle.executed_steps as f64
            };
        }

        let batch = trainer.batch_size as f64;
        let advantages = compute_advantages(&returns, trainer.normalize_advantages);
        let mut flat_steps = Vec::new();
        let mut flat_advantages = Vec::new();
        for (episode, trajectory) in trajectories.into_iter().enumerate() {
            for step in trajectory {
                flat_steps.push(step);
                flat_advantages.push(advantages.per_episode[episode]);
            }
        }
        let update = reinforcepp_loss(
            &policy.weights,
            &reference_weights,
            &flat_steps,
            &flat_advantages,
            trainer.beta,
        )?;
        for (w, g) in policy.weights.iter_mut().zip(update.grad.iter()) {
            *w -= trainer.learning_rate * g;
        }

        let mean_return = returns.iter().sum::<f64>() / batch;
        let detection = detection_sum / batch;
        curriculum.update_lemon(detection);
        log.push(IterationLog {
            iteration,
            mean_return,
            loss: update.loss,
            mean_penalty: update.mean_penalty,
            curriculum_stage: curriculum.stage,
            mixture: curriculum.mixture.clone(),
            crash: None,
            lemon: Some(LemonIterStats {
                detection,
                purchase_rate: purchase_rate_sum / batch,
                mean_surplus_norm: surplus_sum / batch,
                mean_health: health_sum / batch,
                honest_buy_rate: honest_buy_sum / batch,
            }),
        });

        if let Some(message) = guard.observe(mean_return) {
            halted = Some(message);
            break;
        }
    }

    Ok(TrainOutcome {
        policy,
        reference_weights,
        log,
        halted,
    })
}

/// Outcome of the bandit sanity harness.
#[derive(Debug, Clone)]
pub struct BanditOutcome {
    /// Final action probabilities.
    pub probabilities: Vec<f64>,
    /// Probabilities under the frozen reference (uniform at zero weights).
    pub reference_probabilities: Vec<f64>,
    /// Total variation distance between the two.
    pub total_variation: f64,
}

/// Minimal convergence oracle: a one-step environment whose arms pay fixed
/// rewards. Verifies the optimizer mechanism end to end (sampling, episode
/// returns, advantages, penalty, gradient step) without market dynamics.
pub fn train_bandit(
    arm_values: &[f64],
    iterations: usize,
    batch_size: usize,
    learning_rate: f64,
    beta: f64,
    seed: u64,
) -> Result<BanditOutcome, RlError> {
    let n = arm_values.len();
    let candidates = super::CandidateSet::Blocked {
        features: vec![1.0],
        n_actions: n,
    };
    let mut weights = vec![0.0; n];
    let ref_weights = vec![0.0; n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for _ in 0..iterations {
        let mut steps = Vec::new();
        let mut returns = Vec::new();
        for _ in 0..batch_size {
            let scores = candidates.scores(&weights);
            let probs = super::floored_probabilities(&scores);
            let chosen = super::sample_index(&probs, &mut rng);
            returns.push(arm_values[chosen]);
            steps.push(TrajStep {
                candidates: candidates.clone(),
                chosen,
            });
        }
        let advantages = compute_advantages(&returns, true);
        let flat: Vec<f64> = advantages.per_episode.clone();
        let update = reinforcepp_loss(&weights, &ref_weights, &steps, &flat, beta)?;
        for (w, g) in weights.iter_mut().zip(update.grad.iter()) {
            *w -= learning_rate * g;
        }
    }

    let probabilities = super::floored_probabilities(&candidates.scores(&weights));
    let reference_probabilities = super::floored_probabilities(&candidates.scores(&ref_weights));
    let total_variation = probabilities
        .iter()
        .zip(reference_probabilities.iter())
        .map(|(p, q)| (p - q).abs())
        .sum::<f64>()
        / 2.0;
    Ok(BanditOutcome {
        probabilities,
        reference_probabilities,
        total_variation,
    })
}


#[cfg(test)]
mod guard_tests {
    use super::DivergenceGuard;

    #[test]
    fn divergence_guard_halts_after_patience() {
        let mut guard = DivergenceGuard::new(3);
        assert!(guard.observe(1.0).is_none());
        assert!(guard.observe(0.9).is_none());
        assert!(guard.observe(0.8).is_none());
        assert!(guard.observe(0.7).is_some());
    }

    #[test]
    fn divergence_guard_resets_on_recovery() {
        let mut guard = DivergenceGuard::new(3);
        guard.observe(1.0);
        guard.observe(0.9);
        guard.observe(0.9);
        assert!(guard.observe(1.1).is_none());
        guard.observe(0.9);
        guard.observe(0.9);
        assert!(guard.observe(0.9).is_some());
    }
}
