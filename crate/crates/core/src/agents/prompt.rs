//! Deterministic prompt templating for the external-endpoint policies.
//!
//! Section order is fixed: [HISTORICAL], [BEST TIMESTEPS] (firm anchor
//! only), [CURRENT OBSERVATION] (buyer only), [PERSONA], [ACTION].
//! `{placeholder}` slots are bound from observation fields and tier
//! constants; any slot left unbound is a hard error raised before any
//! network call.

use crate::crash::FirmObservation;
use crate::engine::Scenario;
use crate::lemon::{BuyerObservation, QualityTier};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub scenario: Scenario,
    pub persona: String,
    pub action: String,
    /// How many top-scoring historical steps the firm anchor reflects on.
    pub best_steps: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("unbound placeholder {{{0}}} after rendering")]
    UnboundPlaceholder(String),
    #[error("template scenario {template} does not match observation scenario {observation}")]
    ScenarioMismatch {
        template: Scenario,
        observation: Scenario,
    },
    #[error("failed to read template file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

const FIRM_PERSONA: &str = "You are a stabilizing firm and act as this market's price anchor. \
Rules: (1) Never price below your effective unit cost: your unit cost of {unit_cost} plus your \
amortized per-unit overhead. (2) When competitors cut prices below that level, hold your price \
instead of following them down. (3) Buy supply conservatively: purchase only what you expect to \
sell at your target price.";

const FIRM_ACTION: &str = "Decide your posted price and supply purchase. Reply with JSON only: \
{\"price\": <number>, \"buy\": {\"good\": <integer>}}";

const BUYER_PERSONA: &str = "You are buying used cars and want good value without overpaying. \
Typical price ranges by quality tier: mint ${mint_lo}-${mint_hi}, good ${good_lo}-${good_hi}, \
fair ${fair_lo}-${fair_hi}, poor ${poor_lo}-${poor_hi}. Treat any listing priced well outside \
the range for its claimed tier as suspect. Some sellers misrepresent quality in their \
descriptions; weigh the written description, the seller's reputation score when shown, and your \
own past transactions. You may buy at most one car per round. If nothing offers good value, \
pass and wait.";

const BUYER_ACTION: &str = "Decide whether to bid on one listing or pass this round. Reply with \
JSON only: {\"decision\": \"bid\", \"listing_id\": \"<id>\"} or {\"decision\": \"pass\"}";

impl PromptTemplate {
    pub fn stabilizing_firm_default() -> Self {
        Self {
            scenario: Scenario::Crash,
            persona: FIRM_PERSONA.to_string(),
            action: FIRM_ACTION.to_string(),
            best_steps: 2,
        }
    }

    pub fn skeptical_guardian_default() -> Self {
        Self {
            scenario: Scenario::Lemon,
            persona: BUYER_PERSONA.to_string(),
            action: BUYER_ACTION.to_string(),
            best_steps: 0,
        }
    }

    /// Load persona/action overrides from a directory when present:
    /// `<scenario>_persona.txt` and `<scenario>_action.txt`.
    pub fn load_dir(dir: &Path, scenario: Scenario) -> Result<Self, RenderError> {
        let mut template = match scenario {
            Scenario::Crash => Self::stabilizing_firm_default(),
            Scenario::Lemon => Self::skeptical_guardian_default(),
        };
        for (suffix, slot) in [("persona", 0usize), ("action", 1usize)] {
            let path = dir.join(format!("{scenario}_{suffix}.txt"));
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|source| RenderError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                let text = text.trim_end().to_string();
                if slot == 0 {
                    template.persona = text;
                } else {
                    template.action = text;
                }
            }
        }
        Ok(template)
    }
}

/// One reflection entry: a historical step with its composite score.
#[derive(Debug, Clone)]
pub struct BestStep {
    pub step: usize,
    pub score: f64,
    pub summary: String,
}

fn substitute(text: &str, bindings: &[(&str, String)]) -> String {
    let mut out = text.to_string();
    for (key, value) in bindings {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}

fn check_unbound(text: &str) -> Result<(), RenderError> {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if let Some(end) = text[i + 1..].find(['}', '{', ' ']) {
                let candidate = &text[i + 1..i + 1 + end];
                if text.as_bytes().get(i + 1 + end) == Some(&b'}')
                    && !candidate.is_empty()
                    && candidate
                        .chars()
                        .all(|c| c.is_ascii_lowercase() || c == '_')
                {
                    return Err(RenderError::UnboundPlaceholder(candidate.to_string()));
                }
            }
        }
        i += 1;
    }
    Ok(())
}

fn money(value: f64) -> String {
    if value == value.trunc() {
        format!("{value:.0}")
    } else {
        format!("{value:.2}")
    }
}

/// Render the firm prompt: recent history, optional best-step reflection,
/// persona, action request.
pub fn render_firm_prompt(
    template: &PromptTemplate,
    obs: &FirmObservation,
    step: usize,
    best: &[BestStep],
) -> Result<String, RenderError> {
    if template.scenario != Scenario::Crash {
        return Err(RenderError::ScenarioMismatch {
            template: template.scenario,
            observation: Scenario::Crash,
        });
    }
    let mut text = String::new();
    text.push_str("[HISTORICAL]\n");
    if obs.history.is_empty() {
        text.push_str("No history yet.\n");
    }
    let first_step = step.saturating_sub(obs.history.len());
    for (i, entry) in obs.history.iter().enumerate() {
        let _ = writeln!(
            text,
            "Timestep {}: Set Price: good: ${}; Supply Bought: {}; Units Sold: {}; Revenue: ${}; \
             Expenses: ${}",
            first_step + i,
            money(entry.price_set),
            entry.supply_bought,
            entry.units_sold,
            money(entry.revenue),
            money(entry.expenses),
        );
    }
    let competitor_line = if obs.competitor_prices.is_empty() {
        "none visible".to_string()
    } else {
        obs.competitor_prices
            .iter()
            .map(|p| format!("${}", money(*p)))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let _ = writeln!(
        text,
        "Current: Cash: ${}; Inventory: good: {}; Your unit cost per good: good: ${}; Previous \
         Step Competitor Prices: {}",
        money(obs.cash),
        obs.inventory,
        money(obs.unit_cost),
        competitor_line,
    );

    if template.best_steps > 0 {
        text.push_str("[BEST TIMESTEPS]\n");
        let _ = writeln!(
            text,
            "Best {} timesteps (market health + profit):",
            template.best_steps
        );
        if best.is_empty() {
            text.push_str("None recorded yet.\n");
        }
        for entry in best.iter().take(template.best_steps) {
            let _ = writeln!(
                text,
                "Timestep {} (score {:.3}): {}",
                entry.step, entry.score, entry.summary
            );
        }
    }

    text.push_str("[PERSONA]\n");
    text.push_str(&substitute(
        &template.persona,
        &[("unit_cost", money(obs.unit_cost))],
    ));
    text.push_str("\n[ACTION]\n");
    text.push_str(&template.action);
    check_unbound(&text)?;
    Ok(text)
}

/// Render the buyer prompt: transaction history, current listings, persona,
/// action request. The reputation line is omitted entirely when reputation
/// is not visible.
pub fn render_buyer_prompt(
    template: &PromptTemplate,
    obs: &BuyerObservation,
    step: usize,
) -> Result<String, RenderError> {
    if template.scenario != Scenario::Lemon {
        return Err(RenderError::ScenarioMismatch {
            template: template.scenario,
            observation: Scenario::Lemon,
        });
    }
    let mut text = String::new();
    text.push_str("[HISTORICAL]\n");
    if obs.history.is_empty() {
        text.push_str("No purchases yet.\n");
    }
    let first_step = step.saturating_sub(obs.history.len());
    for (i, tx) in obs.history.iter().enumerate() {
        let _ = writeln!(
            text,
            "Timestep {}: Bought from seller {}; Price Paid: ${}; True Quality Received: {:.1}; \
             Surplus: ${}",
            first_step + i,
            tx.anonymized_seller,
            money(tx.price_paid),
            tx.quality_received,
            money(tx.surplus),
        );
    }
    if let Some(mean_quality) = obs.mean_quality {
        let _ = writeln!(text, "Mean quality received so far: {mean_quality:.2}");
    }

    text.push_str("[CURRENT OBSERVATION]\n");
    if obs.listings.is_empty() {
        text.push_str("No listings visible this round.\n");
    }
    for view in &obs.listings {
        let _ = write!(
            text,
            "{}; Listed Price: ${}; Description: \"{}\"",
            view.listing_id,
            money(view.price),
            view.description,
        );
        if let Some(reputation) = view.reputation {
            let _ = write!(text, "; Seller Reputation: {reputation:.2}");
        }
        text.push('\n');
    }

    let tier_binding = |tier: QualityTier| {
        let (lo, hi) = tier.bracket();
        (money(lo), money(hi))
    };
    let (poor_lo, poor_hi) = tier_binding(QualityTier::Poor);
    let (fair_lo, fair_hi) = tier_binding(QualityTier::Fair);
    let (good_lo, good_hi) = tier_binding(QualityTier::Good);
    let (mint_lo, mint_hi) = tier_binding(QualityTier::Mint);
    text.push_str("[PERSONA]\n");
    text.push_str(&substitute(
        &template.persona,
        &[
            ("poor_lo", poor_lo),
            ("poor_hi", poor_hi),
            ("fair_lo", fair_lo),
            ("fair_hi", fair_hi),
            ("good_lo", good_lo),
            ("good_hi", good_hi),
            ("mint_lo", mint_lo),
            ("mint_hi", mint_hi),
        ],
    ));
    text.push_str("\n[ACTION]\n");
    text.push_str(&template.action);
    check_unbound(&text)?;
    Ok(text)
}
