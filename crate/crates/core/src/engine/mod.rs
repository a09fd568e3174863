//! The episode engine: owns the discrete-time loop, the seeded random
//! source, the policy-dispatch boundary, and the append-only episode log.
//!
//! All agents act simultaneously on the previous step's information set:
//! the engine builds every observation, then collects every action, and
//! only then lets the environment mutate state. A policy failure (malformed
//! action or transport error) is replaced by the environment's defined
//! no-op and flagged in the record.

pub mod record;
pub mod replay;

pub use record::{
    ActionRecord, EpisodeHeader, EpisodeRecord, Event, LlmUsage, ObservationDigest, RecordError,
    RosterEntry, Scenario, StepData, SubstitutionFlag,
};

use crate::crash::{FirmAction, FirmObservation};
use crate::lemon::{BuyerAction, BuyerObservation};
use crate::metrics::bundle::MetricBundle;
use crate::rng::RandomSource;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// The observation side of the engine/policy boundary.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "lowercase")]
pub enum Observation {
    Crash(FirmObservation),
    Lemon(BuyerObservation),
}

/// The action side of the engine/policy boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "lowercase")]
pub enum Action {
    Crash(FirmAction),
    Lemon(BuyerAction),
}

/// Why a policy failed to produce an action this step.
#[derive(Debug, Clone, thiserror::Error)]
pub enum PolicyError {
    #[error("malformed action: {0}")]
    Malformed(String),
    #[error("transport error: {0}")]
    Transport(String),
}

impl PolicyError {
    pub fn flag_reason(&self) -> &'static str {
        match self {
            PolicyError::Malformed(_) => "invalid_action",
            PolicyError::Transport(_) => "transport_error",
        }
    }
}

/// A decision-making agent. Implementations must be pure functions of the
/// observation, their own parameters, and the provided exploration stream.
pub trait Policy: Send {
    /// Stable policy-kind tag recorded in the episode header.
    fn kind(&self) -> &'static str;

    fn act(
        &mut self,
        obs: &Observation,
        exploration: &mut ChaCha8Rng,
    ) -> Result<Action, PolicyError>;

    /// Token usage of the most recent `act`, for transports that meter it.
    fn take_usage(&mut self) -> Option<LlmUsage> {
        None
    }
}

/// Roster slot binding an agent id to its policy. The engine re-derives the
/// exploration stream from `(seed, agent_id)` at episode start, so policy
/// evaluation order never perturbs any sequence.
pub struct PolicyHandle {
    pub agent_id: String,
    pub policy: Box<dyn Policy>,
    exploration: ChaCha8Rng,
}

impl PolicyHandle {
    pub fn new(agent_id: impl Into<String>, policy: Box<dyn Policy>) -> Self {
        let agent_id = agent_id.into();
        let exploration = RandomSource::policy_stream(0, &agent_id);
        Self {
            agent_id,
            policy,
            exploration,
        }
    }

    pub fn kind(&self) -> &'static str {
        self.policy.kind()
    }
}

/// Per-step output handed from an environment back to the engine.
pub struct StepOutcome {
    pub rewards: Vec<record::RewardEntry>,
    pub data: StepData,
}

/// A market environment driven by the engine.
///
/// `begin_step` runs before observations (listing generation and the like);
/// `observe` must not mutate market state other than consuming its named
/// streams and remembering what was shown; `step` applies the simultaneous
/// transition for all collected actions.
pub trait Environment {
    fn scenario(&self) -> Scenario;
    fn horizon(&self) -> usize;
    fn config_json(&self) -> serde_json::Value;
    /// Roster entries for agents simulated procedurally (no policy slot).
    fn procedural_roster(&self) -> Vec<RosterEntry> {
        Vec::new()
    }
    /// Ids of agents that act this step, in the environment's fixed order.
    fn acting_agents(&self) -> Vec<String>;
    fn begin_step(&mut self, _t: usize, _rng: &mut RandomSource) {}
    fn observe(&mut self, agent_id: &str, t: usize, rng: &mut RandomSource) -> Observation;
    /// Small scalar summary of an observation for the event digest.
    fn observation_summary(&self, obs: &Observation) -> serde_json::Value;
    /// The action executed when a policy fails: hold price and buy nothing,
    /// or pass, depending on the market.
    fn no_op(&self, agent_id: &str) -> Action;
    /// Domain check and normalization of a submitted action.
    fn validate(&self, agent_id: &str, action: Action) -> Result<Action, String>;
    fn step(
        &mut self,
        t: usize,
        actions: &[(String, Action)],
        rng: &mut RandomSource,
    ) -> StepOutcome;
    /// Early termination (e.g. every firm bankrupt).
    fn finished(&self) -> bool;
    /// The environment's own running counters, for replay cross-checks.
    fn online_bundle(&self) -> MetricBundle;
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("roster mismatch: environment expects agents {expected:?}, roster has {found:?}")]
    RosterMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("horizon must be >= 1")]
    ZeroHorizon,
}

/// Engine knobs that do not change market semantics.
#[derive(Debug, Clone)]
pub struct EngineOptions {
    /// Log full observation content into events (large; off by default).
    pub log_observations: bool,
    /// Max concurrent policy evaluations within a step. Actions are always
    /// joined before the environment mutates, so results are identical for
    /// any value.
    pub parallel_policies: usize,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            log_observations: false,
            parallel_policies: 1,
        }
    }
}

/// A finished episode: the log plus the environment's online counters.
pub struct RunOutput {
    pub record: EpisodeRecord,
    pub bundle: MetricBundle,
}

fn observation_digest(
    env: &dyn Environment,
    agent_id: &str,
    obs: &Observation,
    log_full: bool,
) -> ObservationDigest {
    let json = serde_json::to_value(obs).expect("observation serializes");
    let canonical = serde_json::to_string(&json).expect("observation serializes");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    let sha = hasher.finalize();
    let sha_hex: String = sha.iter().take(8).map(|b| format!("{b:02x}")).collect();
    ObservationDigest {
        agent_id: agent_id.to_string(),
        sha256: sha_hex,
        summary: env.observation_summary(obs),
        full: log_full.then_some(json),
    }
}

/// Evaluate policies for this step's observations, honoring the parallelism
/// bound. Output order matches input order regardless of scheduling.
fn collect_actions(
    handles: &mut [(&mut PolicyHandle, &Observation)],
    parallel: usize,
) -> Vec<Result<Action, PolicyError>> {
    if parallel <= 1 || handles.len() <= 1 {
        return handles
            .iter_mut()
            .map(|(handle, obs)| {
                let exploration = &mut handle.exploration;
                handle.policy.act(obs, exploration)
            })
            .collect();
    }
    let n = handles.len();
    let chunk_size = n.div_ceil(parallel);
    let mut results: Vec<Option<Result<Action, PolicyError>>> = Vec::new();
    results.resize_with(n, || None);
    std::thread::scope(|scope| {
        let mut remaining_results = results.as_mut_slice();
        let mut remaining_handles = handles;
        while !remaining_handles.is_empty() {
            let take = chunk_size.min(remaining_handles.len());
            let (chunk, rest) = remaining_handles.split_at_mut(take);
            let (chunk_results, rest_results) = remaining_results.split_at_mut(take);
            remaining_handles = rest;
            remaining_results = rest_results;
            scope.spawn(move || {
                for ((handle, obs), slot) in chunk.iter_mut().zip(chunk_results.iter_mut()) {
                    let exploration = &mut handle.exploration;
                    *slot = Some(handle.policy.act(obs, exploration));
                }
            });
        }
    });
    results
        .into_iter()
        .map(|r| r.expect("all slots filled"))
        .collect()
}

/// Run one complete episode.
///
/// Pure function of `(environment config, roster policies, seed)`: identical
/// inputs produce byte-identical serialized records. Exactly one event is
/// emitted per executed timestep.
pub fn run_episode(
    env: &mut dyn Environment,
    roster: &mut [PolicyHandle],
    seed: u64,
    options: &EngineOptions,
) -> Result<RunOutput, EngineError> {
    if env.horizon() == 0 {
        return Err(EngineError::ZeroHorizon);
    }
    let expected = env.acting_agents();
    {
        let mut expected_sorted = expected.clone();
        expected_sorted.sort();
        let mut found: Vec<String> = roster.iter().map(|h| h.agent_id.clone()).collect();
        found.sort();
        if expected_sorted != found {
            return Err(EngineError::RosterMismatch {
                expected: expected_sorted,
                found,
            });
        }
    }

    let mut rng = RandomSource::new(seed);
    for handle in roster.iter_mut() {
        handle.exploration = RandomSource::policy_stream(seed, &handle.agent_id);
    }

    let mut header_roster: Vec<RosterEntry> = roster
        .iter()
        .map(|h| RosterEntry {
            agent_id: h.agent_id.clone(),
            policy: h.kind().to_string(),
        })
        .collect();
    header_roster.extend(env.procedural_roster());

    let header = EpisodeHeader {
        format_version: record::RECORD_FORMAT_VERSION,
        scenario: env.scenario(),
        seed,
        config: env.config_json(),
        roster: header_roster,
        log_observations: options.log_observations,
    };

    let mut events: Vec<Event> = Vec::new();
    let horizon = env.horizon();

    for t in 0..horizon {
        if env.finished() {
            break;
        }
        env.begin_step(t, &mut rng);

        let acting = env.acting_agents();
        let observations: Vec<(String, Observation)> = acting
            .iter()
            .map(|id| (id.clone(), env.observe(id, t, &mut rng)))
            .collect();

        let digests: Vec<ObservationDigest> = observations
            .iter()
            .map(|(id, obs)| observation_digest(env, id, obs, options.log_observations))
            .collect();

        // Pair each acting agent with its policy handle, preserving the
        // environment's agent order.
        let mut pairs: Vec<(&mut PolicyHandle, &Observation)> = Vec::new();
        {
            let mut remaining: Vec<&mut PolicyHandle> = roster.iter_mut().collect();
            for (id, obs) in &observations {
                let pos = remaining
                    .iter()
                    .position(|h| &h.agent_id == id)
                    .expect("roster covers acting agents");
                pairs.push((remaining.swap_remove(pos), obs));
            }
        }

        let raw_actions = collect_actions(&mut pairs, options.parallel_policies);

        let mut action_records: Vec<ActionRecord> = Vec::new();
        let mut executed: Vec<(String, Action)> = Vec::new();
        for (((handle, _), raw), (id, _)) in
            pairs.iter_mut().zip(raw_actions).zip(observations.iter())
        {
            let usage = handle.policy.take_usage();
            let (action, substituted) = match raw {
                Ok(action) => match env.validate(id, action.clone()) {
                    Ok(normalized) => (normalized, None),
                    Err(detail) => (
                        env.no_op(id),
                        Some(SubstitutionFlag {
                            reason: "invalid_action".into(),
                            detail,
                            raw: serde_json::to_value(&action).ok(),
                        }),
                    ),
                },
                Err(err) => (
                    env.no_op(id),
                    Some(SubstitutionFlag {
                        reason: err.flag_reason().into(),
                        detail: err.to_string(),
                        raw: None,
                    }),
                ),
            };
            action_records.push(ActionRecord {
                agent_id: id.clone(),
                action: serde_json::to_value(&action).expect("action serializes"),
                substituted,
                llm_usage: usage,
            });
            executed.push((id.clone(), action));
        }

        let outcome = env.step(t, &executed, &mut rng);
        let terminal = t + 1 == horizon || env.finished();
        events.push(Event {
            t,
            observations: digests,
            actions: action_records,
            rewards: outcome.rewards,
            data: outcome.data,
            terminal,
        });
        if terminal {
            break;
        }
    }

    Ok(RunOutput {
        record: EpisodeRecord { header, events },
        bundle: env.online_bundle(),
    })
}
