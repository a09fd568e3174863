//! Deterministic multi-agent market simulator.
//!
//! Two economic environments share one episode engine:
//!
//! - a B2C price-competition market where firms post prices, buy supply,
//!   face Poisson consumer demand with a discovery limit, and go bankrupt
//!   permanently when cash turns negative;
//! - a C2C listing market with hidden quality tiers, rolling-window seller
//!   reputation, review votes, and a deceptive principal that cycles through
//!   cheap seller identities.
//!
//! Policies (scripted rules, small trainable softmax heads, or an external
//! chat-completion endpoint) plug into the engine behind a uniform
//! observation/action boundary. Every run is a pure function of
//! `(config, roster, seed)` and produces an append-only JSONL episode record
//! from which all metrics can be recomputed.

pub mod agents;
pub mod config;
pub mod crash;
pub mod engine;
pub mod history;
pub mod lemon;
pub mod metrics;
pub mod rl;
pub mod rng;

pub use engine::{run_episode, Action, Observation, PolicyHandle, RunOutput};
pub use rng::RandomSource;
