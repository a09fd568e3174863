//! Append-only episode log: one JSON header line, then one JSON line per
//! executed timestep. Floats serialize with full round-trip precision, and
//! identical `(config, seed)` runs produce byte-identical files.

use crate::crash::CrashTransaction;
use crate::lemon::{FailedBid, LemonTransaction, QualityTier, Vote};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

pub const RECORD_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Crash,
    Lemon,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::Crash => write!(f, "crash"),
            Scenario::Lemon => write!(f, "lemon"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RosterEntry {
    pub agent_id: String,
    pub policy: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub format_version: u32,
    pub scenario: Scenario,
    pub seed: u64,
    pub config: serde_json::Value,
    pub roster: Vec<RosterEntry>,
    pub log_observations: bool,
}

/// Hash plus key scalars of one agent's observation; full content only when
/// the run opted into observation logging.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservationDigest {
    pub agent_id: String,
    pub sha256: String,
    pub summary: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub full: Option<serde_json::Value>,
}

/// Why an agent's submitted action was replaced by the environment no-op.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubstitutionFlag {
    /// "policy_error", "transport_error", or "invalid_action".
    pub reason: String,
    pub detail: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LlmUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// The action actually executed for one agent, with audit flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActionRecord {
    pub agent_id: String,
    pub action: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub substituted: Option<SubstitutionFlag>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub llm_usage: Option<LlmUsage>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardEntry {
    pub agent_id: String,
    pub reward: f64,
}

/// A supply purchase clipped to what the firm could afford.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PurchaseClip {
    pub agent_id: String,
    pub requested: u64,
    pub granted: u64,
}

/// Post-step snapshot of one firm that acted this step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FirmSnapshot {
    pub agent_id: String,
    pub price: f64,
    pub cash: f64,
    pub inventory: u64,
    pub alive: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrashStepData {
    pub demand: u64,
    pub purchase_clips: Vec<PurchaseClip>,
    pub transactions: Vec<CrashTransaction>,
    /// Firms that acted this step, after settlement.
    pub firms: Vec<FirmSnapshot>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewListingRecord {
    pub listing_id: String,
    pub seller_id: String,
    pub claimed_tier: QualityTier,
    pub true_tier: QualityTier,
    pub price: f64,
    pub sybil: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShownListings {
    pub buyer: String,
    pub listing_ids: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VoteRecord {
    pub seller_id: String,
    pub vote: Vote,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RotationRecord {
    pub retired: String,
    pub activated: String,
}

/// End-of-step reputation digest per identity (recomputable from the vote
/// log; stored so replay can cross-check the window arithmetic).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentitySnapshot {
    pub id: String,
    pub sybil: bool,
    pub reputation: f64,
    pub retired: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LemonStepData {
    pub new_listings: Vec<NewListingRecord>,
    pub shown: Vec<ShownListings>,
    pub transactions: Vec<LemonTransaction>,
    pub failed_bids: Vec<FailedBid>,
    pub votes: Vec<VoteRecord>,
    pub rotations: Vec<RotationRecord>,
    pub identities: Vec<IdentitySnapshot>,
    pub active_listings: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "lowercase")]
pub enum StepData {
    Crash(CrashStepData),
    Lemon(LemonStepData),
}

/// One executed timestep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Event {
    pub t: usize,
    pub observations: Vec<ObservationDigest>,
    pub actions: Vec<ActionRecord>,
    pub rewards: Vec<RewardEntry>,
    pub data: StepData,
    /// True on the final event of the episode.
    pub terminal: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error("io error reading record: {0}")]
    Io(#[from] std::io::Error),
    #[error("record is empty: missing header line")]
    MissingHeader,
    #[error("bad header line: {0}")]
    BadHeader(serde_json::Error),
    #[error("bad event at index {index}: {source}")]
    BadEvent {
        index: usize,
        source: serde_json::Error,
    },
    #[error("event at index {index} has t = {found}, expected {expected}")]
    OutOfOrder {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("record truncated after event index {last_index}: final event is not terminal")]
    Truncated { last_index: usize },
    #[error("record has a header but no events")]
    NoEvents,
}

/// A complete episode: header plus ordered per-step events.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub header: EpisodeHeader,
    pub events: Vec<Event>,
}

impl EpisodeRecord {
    /// Serialize as JSONL: header line, then one line per event.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        out.push_str(&serde_json::to_string(&self.header).expect("header serializes"));
        out.push('\n');
        for event in &self.events {
            out.push_str(&serde_json::to_string(event).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    /// Parse from JSONL, validating event ordering and completeness. The
    /// first malformed event is reported by index.
    pub fn from_jsonl(text: &str) -> Result<Self, RecordError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header_line = lines.next().ok_or(RecordError::MissingHeader)?;
        let header: EpisodeHeader =
            serde_json::from_str(header_line).map_err(RecordError::BadHeader)?;
        let mut events = Vec::new();
        for (index, line) in lines.enumerate() {
            let event: Event = serde_json::from_str(line)
                .map_err(|source| RecordError::BadEvent { index, source })?;
            if event.t != index {
                return Err(RecordError::OutOfOrder {
                    index,
                    expected: index,
                    found: event.t,
                });
            }
            events.push(event);
        }
        if events.is_empty() {
            return Err(RecordError::NoEvents);
        }
        if !events.last().map(|e| e.terminal).unwrap_or(false) {
            return Err(RecordError::Truncated {
                last_index: events.len() - 1,
            });
        }
        Ok(Self { header, events })
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), RecordError> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self, RecordError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_jsonl(&text)
    }

    /// Total LLM token usage over the episode.
    pub fn llm_usage_totals(&self) -> LlmUsage {
        let mut totals = LlmUsage {
            prompt_tokens: 0,
            completion_tokens: 0,
        };
        for event in &self.events {
            for action in &event.actions {
                if let Some(usage) = &action.llm_usage {
                    totals.prompt_tokens += usage.prompt_tokens;
                    totals.completion_tokens += usage.completion_tokens;
                }
            }
        }
        totals
    }
}
