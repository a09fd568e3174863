//! Policy-gradient training with a squared log-ratio reference penalty and
//! adaptive curricula.
//!
//! The objective per step is `-A * log pi(a|s) + beta * (log pi(a|s) -
//! log pi_ref(a|s))^2`, averaged over the batch's steps. The raw log-ratio
//! can be negative for individual actions, which would reward divergence;
//! squaring makes every penalty term non-negative, penalizing deviation
//! from the reference in both directions.

pub mod curriculum;
pub mod policy;
pub mod train;

pub use curriculum::{
    crash_mixture, crash_stage, lemon_mixture, lemon_stage, sample_mixture, CurriculumState,
};
pub use policy::{
    floored_probabilities, log_softmax, sample_index, CandidateSet, Head, ParametricPolicy,
    TrajStep, TrajectoryRecorder,
};
pub use train::{
    train_bandit, train_crash, train_lemon, BanditOutcome, IterationLog, LemonRewardWeights,
    TrainOutcome, TrainerConfig,
};

#[derive(Debug, thiserror::Error)]
pub enum RlError {
    #[error("non-finite log probability at trajectory step {step}")]
    NonFinite { step: usize },
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("advantages length {advantages} does not match trajectory length {steps}")]
    LengthMismatch { advantages: usize, steps: usize },
    #[error("weight dimension {weights} does not match candidate dimension {candidates}")]
    DimensionMismatch { weights: usize, candidates: usize },
}

/// Loss value from already-known per-step quantities
/// `(advantage, log_prob, log_prob_ref)`: the mean over steps of
/// `-A * logp + beta * (logp - logp_ref)^2`.
pub fn reinforcepp_loss_value(steps: &[(f64, f64, f64)], beta: f64) -> Result<f64, RlError> {
    if steps.is_empty() {
        return Err(RlError::EmptyTrajectory);
    }
    let mut total = 0.0;
    for (i, (advantage, logp, logp_ref)) in steps.iter().enumerate() {
        if !logp.is_finite() || !logp_ref.is_finite() {
            return Err(RlError::NonFinite { step: i });
        }
        let delta = logp - logp_ref;
        total += -advantage * logp + beta * delta * delta;
    }
    Ok(total / steps.len() as f64)
}

/// Loss and analytic gradient over a recorded trajectory.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Mean squared-log-ratio penalty term (before the beta factor).
    pub mean_penalty: f64,
}

/// Differentiable path: recompute log probabilities under the current and
/// reference weights and accumulate the analytic gradient
/// `(-A + 2 beta (logp - logp_ref)) * d(logp)/d(weights)`, averaged over
/// steps.
pub fn reinforcepp_loss(
    weights: &[f64],
    ref_weights: &[f64],
    trajectory: &[TrajStep],
    advantages: &[f64],
    beta: f64,
) -> Result<LossGrad, RlError> {
    if trajectory.is_empty() {
        return Err(RlError::EmptyTrajectory);
    }
    if advantages.len() != trajectory.len() {
        return Err(RlError::LengthMismatch {
            advantages: advantages.len(),
            steps: trajectory.len(),
        });
    }
    let n = trajectory.len() as f64;
    let mut grad = vec![0.0; weights.len()];
    let mut loss = 0.0;
    let mut penalty_sum = 0.0;
    for (i, step) in trajectory.iter().enumerate() {
        if step.candidates.weight_dim() != weights.len() {
            return Err(RlError::DimensionMismatch {
                weights: weights.len(),
                candidates: step.candidates.weight_dim(),
            });
        }
        let scores = step.candidates.scores(weights);
        let logp = log_softmax(&scores)[step.chosen];
        let ref_scores = step.candidates.scores(ref_weights);
        let logp_ref = log_softmax(&ref_scores)[step.chosen];
        if !logp.is_finite() || !logp_ref.is_finite() {
            return Err(RlError::NonFinite { step: i });
        }
        let advantage = advantages[i];
        let delta = logp - logp_ref;
        loss += -advantage * logp + beta * delta * delta;
        penalty_sum += delta * delta;

        let probs: Vec<f64> = log_softmax(&scores).iter().map(|l| l.exp()).collect();
        let coeff = (-advantage + 2.0 * beta * delta) / n;
        step.candidates
            .accumulate_grad_log_prob(step.chosen, &probs, coeff, &mut grad);
    }
    Ok(LossGrad {
        loss: loss / n,
        grad,
        mean_penalty: penalty_sum / n,
    })
}

/// Per-episode advantages from episode returns: each episode's steps share
/// one advantage, `(G - mean) / (std + 1e-8)` when normalizing, `G - mean`
/// otherwise. A zero-variance batch degenerates to all-zero advantages.
#[derive(Debug, Clone)]
pub struct Advantages {
    pub per_episode: Vec<f64>,
    pub degenerate: bool,
}

pub fn compute_advantages(returns: &[f64], normalize: bool) -> Advantages {
    if returns.is_empty() {
        return Advantages {
            per_episode: Vec::new(),
            degenerate: true,
        };
    }
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    let centered: Vec<f64> = returns.iter().map(|g| g - mean).collect();
    if !normalize {
        let degenerate = centered.iter().all(|a| *a == 0.0);
        return Advantages {
            per_episode: centered,
            degenerate,
        };
    }
    let var = centered.iter().map(|a| a * a).sum::<f64>() / returns.len() as f64;
    let std = var.sqrt();
    let per_episode: Vec<f64> = centered.iter().map(|a| a / (std + 1e-8)).collect();
    Advantages {
        degenerate: std == 0.0,
        per_episode,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn loss_value_hand_case() {
        // A = 1, logp = -0.5, logp_ref = -1.0, beta = 0.2:
        // 0.5 + 0.2 * 0.25 = 0.55
        let loss = reinforcepp_loss_value(&[(1.0, -0.5, -1.0)], 0.2).unwrap();
        assert!((loss - 0.55).abs() < 1e-12);
    }

    #[test]
    fn squared_penalty_nonnegative_where_linear_is_negative() {
        // With logp = -1.5 against ref -1.0 the raw log-ratio penalty is
        // 0.2 * (-0.5) = -0.1 (a reward for diverging); the squared form is
        // 0.2 * 0.25 = +0.05.
        let logp = -1.5_f64;
        let logp_ref = -1.0_f64;
        let beta = 0.2;
        let linear = beta * (logp - logp_ref);
        assert!((linear - (-0.1)).abs() < 1e-12);
        assert!(linear < 0.0);
        let squared = beta * (logp - logp_ref).powi(2);
        assert!((squared - 0.05).abs() < 1e-12);
        assert!(squared >= 0.0);
        // The full loss with A = 1: 1.5 + 0.05.
        let loss = reinforcepp_loss_value(&[(1.0, logp, logp_ref)], beta).unwrap();
        assert!((loss - 1.55).abs() < 1e-12);
    }

    #[test]
    fn identical_policies_have_zero_penalty() {
        let candidates = CandidateSet::PerCandidate(vec![
            vec![1.0, 0.0, 0.5],
            vec![0.0, 1.0, -0.5],
            vec![0.3, 0.3, 0.3],
        ]);
        let weights = vec![0.4, -0.2, 0.9];
        let trajectory = vec![
            TrajStep {
                candidates: candidates.clone(),
                chosen: 0,
            },
            TrajStep {
                candidates,
                chosen: 2,
            },
        ];
        let result = reinforcepp_loss(&weights, &weights, &trajectory, &[1.0, -1.0], 0.2).unwrap();
        assert_eq!(result.mean_penalty, 0.0);
    }

    #[test]
    fn non_finite_logprob_names_step() {
        let err =
            reinforcepp_loss_value(&[(1.0, -0.5, -1.0), (1.0, f64::NAN, -1.0)], 0.2).unwrap_err();
        match err {
            RlError::NonFinite { step } => assert_eq!(step, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn advantages_two_episode_case() {
        // Returns [1, 3]: mean 2, population std 1 -> [-1, +1].
        let adv = compute_advantages(&[1.0, 3.0], true);
        assert!((adv.per_episode[0] + 1.0).abs() < 1e-7);
        assert!((adv.per_episode[1] - 1.0).abs() < 1e-7);
        assert!(!adv.degenerate);
    }

    #[test]
    fn advantages_single_episode_without_normalization() {
        let adv = compute_advantages(&[5.0], false);
        assert_eq!(adv.per_episode, vec![0.0]);
        assert!(adv.degenerate);
    }

    #[test]
    fn advantages_equal_returns_are_zero() {
        let adv = compute_advantages(&[2.0, 2.0, 2.0], true);
        assert!(adv.per_episode.iter().all(|a| *a == 0.0));
        assert!(adv.degenerate);
    }

    fn random_candidates(rng: &mut ChaCha8Rng, dim: usize) -> CandidateSet {
        if rng.gen_bool(0.5) {
            let n: usize = rng.gen_range(2..5);
            CandidateSet::PerCandidate(
                (0..n)
                    .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect(),
            )
        } else {
            let n: usize = rng.gen_range(2..4);
            let feature_dim = dim / n;
            // Round the weight dim down to a multiple of the action count.
            CandidateSet::Blocked {
                features: (0..feature_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                n_actions: n,
            }
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let dim = 12;
            let candidates = random_candidates(&mut rng, dim);
            let weight_dim = candidates.weight_dim();
            let weights: Vec<f64> = (0..weight_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ref_weights: Vec<f64> = (0..weight_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let chosen = rng.gen_range(0..candidates.n_candidates());
            let advantage = rng.gen_range(-2.0..2.0);
            let beta = rng.gen_range(0.0..1.0);
            let trajectory = vec![TrajStep {
                candidates: candidates.clone(),
                chosen,
            }];

            let analytic =
                reinforcepp_loss(&weights, &ref_weights, &trajectory, &[advantage], beta).unwrap();

            let eps = 1e-6;
            for j in 0..weight_dim {
                let mut plus = weights.clone();
                plus[j] += eps;
                let mut minus = weights.clone();
                minus[j] -= eps;
                let loss_plus =
                    reinforcepp_loss(&plus, &ref_weights, &trajectory, &[advantage], beta)
                        .unwrap()
                        .loss;
                let loss_minus =
                    reinforcepp_loss(&minus, &ref_weights, &trajectory, &[advantage], beta)
                        .unwrap()
                        .loss;
                let fd = (loss_plus - loss_minus) / (2.0 * eps);
                let g = analytic.grad[j];
                let denom = g.abs().max(fd.abs()).max(1e-6);
                assert!(
                    ((g - fd) / denom).abs() < 1e-4,
                    "grad mismatch at {j}: analytic {g}, fd {fd}"
                );
            }
        }
    }
}
