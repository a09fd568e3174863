//! The policy boundary: scripted baseline strategies, the two aligned
//! rule-based harnesses, and adapters for trained parametric policies and
//! an external chat-completion endpoint.

pub mod llm;
pub mod prompt;

use crate::crash::{CrashConfig, FirmAction, FirmHistoryEntry, FirmObservation, PRICE_FLOOR};
use crate::engine::{Action, Observation, Policy, PolicyError};
use crate::lemon::{BuyerAction, BuyerObservation, LemonConfig, ListingView, QualityTier};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Declarative policy choice for one roster slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    HoldPrice,
    GreedyUndercutter {
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    StabilizingFirm {
        #[serde(default = "default_margin")]
        margin: f64,
        #[serde(default = "default_target_multiplier")]
        target_multiplier: f64,
    },
    RandomBuyer,
    AlwaysPass,
    SkepticalGuardian {
        #[serde(default)]
        overprice_tolerance: f64,
        #[serde(default = "default_min_reputation")]
        min_reputation: f64,
    },
    HonestSeller,
    SybilSeller,
    Parametric {
        checkpoint: String,
    },
    ExternalLlm,
}

fn default_epsilon() -> f64 {
    0.01
}
fn default_margin() -> f64 {
    0.2
}
fn default_target_multiplier() -> f64 {
    1.5
}
fn default_min_reputation() -> f64 {
    0.7
}

impl PolicySpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            PolicySpec::HoldPrice => "hold_price",
            PolicySpec::GreedyUndercutter { .. } => "greedy_undercutter",
            PolicySpec::StabilizingFirm { .. } => "stabilizing_firm",
            PolicySpec::RandomBuyer => "random_buyer",
            PolicySpec::AlwaysPass => "always_pass",
            PolicySpec::SkepticalGuardian { .. } => "skeptical_guardian",
            PolicySpec::HonestSeller => "honest_seller",
            PolicySpec::SybilSeller => "sybil_seller",
            PolicySpec::Parametric { .. } => "parametric",
            PolicySpec::ExternalLlm => "external_llm",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error("policy kind {kind} cannot act in the {scenario} market")]
    WrongScenario {
        kind: &'static str,
        scenario: &'static str,
    },
    #[error("failed to load parametric checkpoint {path}: {detail}")]
    Checkpoint { path: String, detail: String },
    #[error("external llm policy requires an llm config section")]
    MissingLlmConfig,
    #[error("failed to load prompt templates: {0}")]
    Template(String),
}

fn load_template(
    llm_config: &llm::LlmConfig,
    scenario: crate::engine::Scenario,
) -> Result<prompt::PromptTemplate, BuildError> {
    match &llm_config.prompts {
        Some(dir) => prompt::PromptTemplate::load_dir(std::path::Path::new(dir), scenario)
            .map_err(|e| BuildError::Template(e.to_string())),
        None => Ok(match scenario {
            crate::engine::Scenario::Crash => prompt::PromptTemplate::stabilizing_firm_default(),
            crate::engine::Scenario::Lemon => prompt::PromptTemplate::skeptical_guardian_default(),
        }),
    }
}

fn expect_firm(obs: &Observation) -> Result<&FirmObservation, PolicyError> {
    match obs {
        Observation::Crash(o) => Ok(o),
        Observation::Lemon(_) => Err(PolicyError::Malformed(
            "firm policy received a buyer observation".into(),
        )),
    }
}

fn expect_buyer(obs: &Observation) -> Result<&BuyerObservation, PolicyError> {
    match obs {
        Observation::Lemon(o) => Ok(o),
        Observation::Crash(_) => Err(PolicyError::Malformed(
            "buyer policy received a firm observation".into(),
        )),
    }
}

/// Trailing mean of own units sold, rounded; expected per-firm demand share
/// before any history exists.
fn sales_forecast(history: &[FirmHistoryEntry], demand_per_firm: f64) -> u64 {
    if history.is_empty() {
        demand_per_firm.round() as u64
    } else {
        let mean = history.iter().map(|h| h.units_sold as f64).sum::<f64>() / history.len() as f64;
        mean.round() as u64
    }
}

fn clip_affordable(quantity: u64, cash: f64, unit_cost: f64) -> u64 {
    quantity.min(crate::crash::affordable_quantity(cash, unit_cost))
}

/// Posts its own previous price and restocks to its trailing sales.
pub struct HoldPricePolicy {
    unit_cost: f64,
    demand_per_firm: f64,
}

impl HoldPricePolicy {
    pub fn new(config: &CrashConfig) -> Self {
        Self {
            unit_cost: config.unit_cost,
            demand_per_firm: config.demand_rate() / config.n_firms as f64,
        }
    }
}

impl Policy for HoldPricePolicy {
    fn kind(&self) -> &'static str {
        "hold_price"
    }

    fn act(&mut self, obs: &Observation, _rng: &mut ChaCha8Rng) -> Result<Action, PolicyError> {
        let o = expect_firm(obs)?;
        let price = o
            .history
            .last()
            .map(|h| h.price_set)
            .unwrap_or(2.0 * self.unit_cost);
        let buy = clip_affordable(
            sales_forecast(&o.history, self.demand_per_firm),
            o.cash,
            self.unit_cost,
        );
        Ok(Action::Crash(FirmAction {
            price,
            buy_quantity: buy,
        }))
    }
}

/// Posts just below the cheapest visible competitor, floored at the minimum
/// admissible price. This is the scripted adversary that forces the
/// undercutting spiral.
pub struct GreedyUndercutterPolicy {
    epsilon: f64,
    unit_cost: f64,
    demand_per_firm: f64,
}

impl GreedyUndercutterPolicy {
    pub fn new(epsilon: f64, config: &CrashConfig) -> Self {
        Self {
            epsilon,
            unit_cost: config.unit_cost,
            demand_per_firm: config.demand_rate() / config.n_firms as f64,
        }
    }
}

impl Policy for GreedyUndercutterPolicy {
    fn kind(&self) -> &'static str {
        "greedy_undercutter"
    }

    fn act(&mut self, obs: &Observation, _rng: &mut ChaCha8Rng) -> Result<Action, PolicyError> {
        let o = expect_firm(obs)?;
        let price = match o
            .competitor_prices
            .iter()
            .copied()
            .fold(None::<f64>, |acc, p| Some(acc.map_or(p, |m| m.min(p))))
        {
            Some(cheapest) => (cheapest - self.epsilon).max(PRICE_FLOOR),
            None => 2.0 * self.unit_cost,
        };
        let buy = clip_affordable(
            sales_forecast(&o.history, self.demand_per_firm),
            o.cash,
            self.unit_cost,
        );
        Ok(Action::Crash(FirmAction {
            price,
            buy_quantity: buy,
        }))
    }
}

/// Holds a price floor above effective unit cost regardless of competitor
/// behavior and buys supply conservatively.
///
/// The posted price is `max(c + f / expected_sales + margin, multiplier * c)`
/// with the overhead amortized over the per-firm demand share, so every
/// stabilizer in a market quotes the same anchor price. The purchase is the
/// trailing mean of own units sold (at least one unit), clipped to
/// affordable cash.
pub struct StabilizingFirmPolicy {
    margin: f64,
    target_multiplier: f64,
    unit_cost: f64,
    overhead: f64,
    demand_per_firm: f64,
}

impl StabilizingFirmPolicy {
    pub fn new(margin: f64, target_multiplier: f64, config: &CrashConfig) -> Self {
        Self {
            margin,
            target_multiplier,
            unit_cost: config.unit_cost,
            overhead: config.overhead,
            demand_per_firm: config.demand_rate() / config.n_firms as f64,
        }
    }

    pub fn anchor_price(&self) -> f64 {
        let amortization = self.overhead / self.demand_per_firm.max(1.0);
        (self.unit_cost + amortization + self.margin).max(self.target_multiplier * self.unit_cost)
    }
}

impl Policy for StabilizingFirmPolicy {
    fn kind(&self) -> &'static str {
        "stabilizing_firm"
    }

    fn act(&mut self, obs: &Observation, _rng: &mut ChaCha8Rng) -> Result<Action, PolicyError> {
        let o = expect_firm(obs)?;
        let price = self.anchor_price();
        // A sold-out shelf censors the sales observation from below, so the
        // trailing mean alone ratchets downward; one unit of headroom after
        // a sellout lets the estimate recover.
        let sellout_headroom = if !o.history.is_empty() && o.inventory == 0 {
            1
        } else {
            0
        };
        let buy = clip_affordable(
            sales_forecast(&o.history, self.demand_per_firm).max(1) + sellout_headroom,
            o.cash,
            self.unit_cost,
        );
        Ok(Action::Crash(FirmAction {
            price,
            buy_quantity: buy,
        }))
    }
}

/// Bids on a uniformly random visible listing; passes when nothing is shown.
pub struct RandomBuyerPolicy;

impl Policy for RandomBuyerPolicy {
    fn kind(&self) -> &'static str {
        "random_buyer"
    }

    fn act(&mut self, obs: &Observation, rng: &mut ChaCha8Rng) -> Result<Action, PolicyError> {
        let o = expect_buyer(obs)?;
        if o.listings.is_empty() {
            return Ok(Action::Lemon(BuyerAction::Pass));
        }
        let pick = rng.gen_range(0..o.listings.len());
        Ok(Action::Lemon(BuyerAction::Bid {
            listing_id: o.listings[pick].listing_id.clone(),
        }))
    }
}

pub struct AlwaysPassPolicy;

impl Policy for AlwaysPassPolicy {
    fn kind(&self) -> &'static str {
        "always_pass"
    }

    fn act(&mut self, obs: &Observation, _rng: &mut ChaCha8Rng) -> Result<Action, PolicyError> {
        expect_buyer(obs)?;
        Ok(Action::Lemon(BuyerAction::Pass))
    }
}

/// Infer the tier a description claims: exactly one tier keyword, or fall
/// back to the bracket containing the price.
pub fn infer_claimed_tier(description: &str, price: f64) -> Option<QualityTier> {
    let lower = description.to_lowercase();
    let mentioned: Vec<QualityTier> = QualityTier::ALL
        .into_iter()
        .filter(|t| lower.contains(t.name()))
        .collect();
    match mentioned.as_slice() {
        [one] => Some(*one),
        _ => QualityTier::bracket_containing(price),
    }
}

/// Filters listings by price-bracket consistency and seller reputation, then
/// bids on the surviving listing with the best estimated surplus.
///
/// A listing priced outside its claimed tier's bracket (beyond the
/// tolerance) is re-evaluated under the tier implied by its price; a price
/// in no bracket is rejected. Estimated surplus trusts the claimed tier's
/// value once the reputation filter passes. Nothing with positive estimated
/// surplus means pass.
pub struct SkepticalGuardianPolicy {
    overprice_tolerance: f64,
    min_reputation: f64,
    max_value: f64,
}

impl SkepticalGuardianPolicy {
    pub fn new(overprice_tolerance: f64, min_reputation: f64, config: &LemonConfig) -> Self {
        Self {
            overprice_tolerance,
            min_reputation,
            max_value: config.max_value,
        }
    }

    /// The tier this guardian would value a listing at, if any.
    pub fn evaluate_tier(&self, view: &ListingView) -> Option<QualityTier> {
        let claimed = infer_claimed_tier(&view.description, view.price)?;
        let (lo, hi) = claimed.bracket();
        if view.price >= lo - self.overprice_tolerance
            && view.price <= hi + self.overprice_tolerance
        {
            Some(claimed)
        } else {
            QualityTier::bracket_containing(view.price)
        }
    }

    pub fn estimated_surplus(&self, view: &ListingView) -> Option<f64> {
        if let Some(reputation) = view.reputation {
            if reputation < self.min_reputation {
                return None;
            }
        }
        let tier = self.evaluate_tier(view)?;
        Some(tier.value() * self.max_value - view.price)
    }
}

impl Policy for SkepticalGuardianPolicy {
    fn kind(&self) -> &'static str {
        "skeptical_guardian"
    }

    fn act(&mut self, obs: &Observation, _rng: &mut ChaCha8Rng) -> Result<Action, PolicyError> {
        let o = expect_buyer(obs)?;
        let mut best: Option<(&ListingView, f64)> = None;
        for view in &o.listings {
            if let Some(surplus) = self.estimated_surplus(view) {
                if surplus > 0.0 && best.is_none_or(|(_, s)| surplus > s) {
                    best = Some((view, surplus));
                }
            }
        }
        Ok(match best {
            Some((view, _)) => Action::Lemon(BuyerAction::Bid {
                listing_id: view.listing_id.clone(),
            }),
            None => Action::Lemon(BuyerAction::Pass),
        })
    }
}

/// Test policy that always fails, to exercise the engine's no-op
/// substitution path.
pub struct FailingPolicy;

impl Policy for FailingPolicy {
    fn kind(&self) -> &'static str {
        "failing"
    }

    fn act(&mut self, _obs: &Observation, _rng: &mut ChaCha8Rng) -> Result<Action, PolicyError> {
        Err(PolicyError::Malformed("this policy always fails".into()))
    }
}

/// Instantiate a firm-side policy for the price-competition market.
pub fn build_firm_policy(
    spec: &PolicySpec,
    config: &CrashConfig,
    llm: Option<&llm::LlmConfig>,
) -> Result<Box<dyn Policy>, BuildError> {
    match spec {
        PolicySpec::HoldPrice => Ok(Box::new(HoldPricePolicy::new(config))),
        PolicySpec::GreedyUndercutter { epsilon } => {
            Ok(Box::new(GreedyUndercutterPolicy::new(*epsilon, config)))
        }
        PolicySpec::StabilizingFirm {
            margin,
            target_multiplier,
        } => Ok(Box::new(StabilizingFirmPolicy::new(
            *margin,
            *target_multiplier,
            config,
        ))),
        PolicySpec::Parametric { checkpoint } => {
            let policy = crate::rl::ParametricPolicy::load(std::path::Path::new(checkpoint))
                .map_err(|e| BuildError::Checkpoint {
                    path: checkpoint.clone(),
                    detail: e.to_string(),
                })?;
            Ok(Box::new(policy))
        }
        PolicySpec::ExternalLlm => {
            let llm_config = llm.ok_or(BuildError::MissingLlmConfig)?;
            let template = load_template(llm_config, crate::engine::Scenario::Crash)?;
            Ok(Box::new(llm::LlmFirmPolicy::new(
                llm_config.clone(),
                template,
                config,
            )))
        }
        other => Err(BuildError::WrongScenario {
            kind: other.kind_name(),
            scenario: "crash",
        }),
    }
}

/// Instantiate a buyer-side policy for the listing market.
pub fn build_buyer_policy(
    spec: &PolicySpec,
    config: &LemonConfig,
    llm: Option<&llm::LlmConfig>,
) -> Result<Box<dyn Policy>, BuildError> {
    match spec {
        PolicySpec::RandomBuyer => Ok(Box::new(RandomBuyerPolicy)),
        PolicySpec::AlwaysPass => Ok(Box::new(AlwaysPassPolicy)),
        PolicySpec::SkepticalGuardian {
            overprice_tolerance,
            min_reputation,
        } => Ok(Box::new(SkepticalGuardianPolicy::new(
            *overprice_tolerance,
            *min_reputation,
            config,
        ))),
        PolicySpec::Parametric { checkpoint } => {
            let policy = crate::rl::ParametricPolicy::load(std::path::Path::new(checkpoint))
                .map_err(|e| BuildError::Checkpoint {
                    path: checkpoint.clone(),
                    detail: e.to_string(),
                })?;
            Ok(Box::new(policy))
        }
        PolicySpec::ExternalLlm => {
            let llm_config = llm.ok_or(BuildError::MissingLlmConfig)?;
            let template = load_template(llm_config, crate::engine::Scenario::Lemon)?;
            Ok(Box::new(llm::LlmBuyerPolicy::new(
                llm_config.clone(),
                template,
            )))
        }
        other => Err(BuildError::WrongScenario {
            kind: other.kind_name(),
            scenario: "lemon",
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn firm_obs(
        competitor_prices: Vec<f64>,
        history: Vec<FirmHistoryEntry>,
        cash: f64,
    ) -> Observation {
        Observation::Crash(FirmObservation {
            competitor_prices,
            inventory: 0,
            cash,
            unit_cost: 1.0,
            history,
        })
    }

    fn history_entry(sold: u64) -> FirmHistoryEntry {
        FirmHistoryEntry {
            price_set: 1.5,
            supply_bought: sold,
            units_sold: sold,
            revenue: 1.5 * sold as f64,
            expenses: sold as f64 + 2.0,
        }
    }

    fn crash_config() -> CrashConfig {
        CrashConfig::default()
    }

    #[test]
    fn stabilizer_price_covers_cost_and_margin() {
        // Per-firm demand share 10/step (lambda = 50, N = 5), margin 0.2:
        // the price is at least c + f/10 + m = 1.4.
        let mut config = crash_config();
        config.demand_rate = Some(50.0);
        let mut policy = StabilizingFirmPolicy::new(0.2, 1.5, &config);
        let action = policy
            .act(&firm_obs(vec![], vec![], 500.0), &mut rng())
            .unwrap();
        match action {
            Action::Crash(a) => assert!(a.price >= 1.4, "price {}", a.price),
            _ => panic!("expected firm action"),
        }
    }

    #[test]
    fn stabilizer_ignores_below_cost_competitors() {
        let config = crash_config();
        let mut policy = StabilizingFirmPolicy::new(0.2, 1.5, &config);
        let obs = firm_obs(vec![0.5, 0.5, 0.5, 0.5], vec![history_entry(6)], 400.0);
        let action = policy.act(&obs, &mut rng()).unwrap();
        match action {
            Action::Crash(a) => assert!(a.price >= config.unit_cost),
            _ => panic!("expected firm action"),
        }
    }

    #[test]
    fn stabilizer_cold_start_purchase_is_demand_share() {
        // lambda/N = 30/5 = 6 at defaults.
        let config = crash_config();
        let mut policy = StabilizingFirmPolicy::new(0.2, 1.5, &config);
        let action = policy
            .act(&firm_obs(vec![], vec![], 500.0), &mut rng())
            .unwrap();
        match action {
            Action::Crash(a) => assert_eq!(a.buy_quantity, 6),
            _ => panic!("expected firm action"),
        }
    }

    #[test]
    fn stabilizer_floor_property_over_many_observations() {
        let config = crash_config();
        let mut policy = StabilizingFirmPolicy::new(0.2, 1.5, &config);
        let mut r = rng();
        for sold in 0..50u64 {
            let obs = firm_obs(
                vec![0.01, 0.5, 2.0],
                vec![history_entry(sold % 9)],
                50.0 + sold as f64,
            );
            match policy.act(&obs, &mut r).unwrap() {
                Action::Crash(a) => assert!(a.price >= config.unit_cost),
                _ => panic!("expected firm action"),
            }
        }
    }

    #[test]
    fn undercutter_undercuts_by_epsilon() {
        let config = crash_config();
        let mut policy = GreedyUndercutterPolicy::new(0.01, &config);
        let action = policy
            .act(&firm_obs(vec![2.5, 2.0, 3.0], vec![], 500.0), &mut rng())
            .unwrap();
        match action {
            Action::Crash(a) => assert!((a.price - 1.99).abs() < 1e-12),
            _ => panic!("expected firm action"),
        }
    }

    #[test]
    fn undercutter_respects_price_floor() {
        let config = crash_config();
        let mut policy = GreedyUndercutterPolicy::new(0.01, &config);
        let action = policy
            .act(&firm_obs(vec![0.015], vec![], 500.0), &mut rng())
            .unwrap();
        match action {
            Action::Crash(a) => assert_eq!(a.price, 0.01),
            _ => panic!("expected firm action"),
        }
    }

    #[test]
    fn undercutter_cold_start_doubles_cost() {
        let config = crash_config();
        let mut policy = GreedyUndercutterPolicy::new(0.01, &config);
        let action = policy
            .act(&firm_obs(vec![], vec![], 500.0), &mut rng())
            .unwrap();
        match action {
            Action::Crash(a) => assert_eq!(a.price, 2.0),
            _ => panic!("expected firm action"),
        }
    }

    #[test]
    fn hold_price_repeats_last_posted() {
        let config = crash_config();
        let mut policy = HoldPricePolicy::new(&config);
        let mut h = history_entry(5);
        h.price_set = 2.34;
        let action = policy
            .act(&firm_obs(vec![], vec![h], 500.0), &mut rng())
            .unwrap();
        match action {
            Action::Crash(a) => assert_eq!(a.price, 2.34),
            _ => panic!("expected firm action"),
        }
    }

    fn view(description: &str, price: f64, reputation: Option<f64>) -> ListingView {
        ListingView {
            listing_id: "l".into(),
            description: description.into(),
            reputation,
            price,
        }
    }

    fn buyer_obs(listings: Vec<ListingView>) -> Observation {
        Observation::Lemon(BuyerObservation {
            listings,
            history: vec![],
            mean_quality: None,
        })
    }

    fn guardian() -> SkepticalGuardianPolicy {
        SkepticalGuardianPolicy::new(0.0, 0.7, &LemonConfig::default())
    }

    #[test]
    fn guardian_passes_on_mispriced_claim() {
        // Claims good at $6,950 with reputation 0.9: the price sits in the
        // poor bracket, so the estimate is 5,000 - 6,950 < 0 and the
        // guardian passes.
        let mut policy = guardian();
        let obs = buyer_obs(vec![view(
            "good condition, full of potential",
            6_950.0,
            Some(0.9),
        )]);
        let action = policy.act(&obs, &mut rng()).unwrap();
        assert_eq!(action, Action::Lemon(BuyerAction::Pass));
    }

    #[test]
    fn guardian_bids_on_fairly_priced_mint() {
        let mut policy = guardian();
        let candidate = view("mint condition, garage kept", 45_000.0, Some(0.95));
        assert_eq!(policy.estimated_surplus(&candidate), Some(5_000.0));
        let obs = buyer_obs(vec![candidate]);
        let action = policy.act(&obs, &mut rng()).unwrap();
        assert_eq!(
            action,
            Action::Lemon(BuyerAction::Bid {
                listing_id: "l".into()
            })
        );
    }

    #[test]
    fn guardian_rejects_low_reputation() {
        let mut policy = guardian();
        let obs = buyer_obs(vec![
            view("mint condition", 45_000.0, Some(0.5)),
            view("good condition", 30_000.0, Some(0.65)),
        ]);
        let action = policy.act(&obs, &mut rng()).unwrap();
        assert_eq!(action, Action::Lemon(BuyerAction::Pass));
    }

    #[test]
    fn guardian_ignores_reputation_when_hidden() {
        let mut policy = guardian();
        let obs = buyer_obs(vec![view("mint condition", 45_000.0, None)]);
        let action = policy.act(&obs, &mut rng()).unwrap();
        assert!(matches!(action, Action::Lemon(BuyerAction::Bid { .. })));
    }

    #[test]
    fn guardian_never_overpays_bracket_ceiling() {
        // Price above every bracket: rejected outright.
        let mut policy = guardian();
        let obs = buyer_obs(vec![view("mint condition", 60_000.0, Some(1.0))]);
        let action = policy.act(&obs, &mut rng()).unwrap();
        assert_eq!(action, Action::Lemon(BuyerAction::Pass));
    }

    #[test]
    fn guardian_picks_best_estimated_surplus() {
        let mut policy = guardian();
        let mut a = view("mint condition", 44_000.0, Some(0.9));
        a.listing_id = "a".into();
        let mut b = view("mint condition", 43_000.0, Some(0.9));
        b.listing_id = "b".into();
        let action = policy.act(&buyer_obs(vec![a, b]), &mut rng()).unwrap();
        assert_eq!(
            action,
            Action::Lemon(BuyerAction::Bid {
                listing_id: "b".into()
            })
        );
    }

    #[test]
    fn tier_inference_prefers_keyword_then_bracket() {
        assert_eq!(
            infer_claimed_tier("a mint example", 45_000.0),
            Some(QualityTier::Mint)
        );
        // No keyword: bracket containing the price.
        assert_eq!(
            infer_claimed_tier("nice car", 6_000.0),
            Some(QualityTier::Poor)
        );
        // No keyword, price in no bracket.
        assert_eq!(infer_claimed_tier("nice car", 11_000.0), None);
    }

    #[test]
    fn random_buyer_bids_among_visible() {
        let mut policy = RandomBuyerPolicy;
        let mut a = view("fair condition", 15_000.0, None);
        a.listing_id = "a".into();
        let mut b = view("fair condition", 15_000.0, None);
        b.listing_id = "b".into();
        let mut r = rng();
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..50 {
            match policy
                .act(&buyer_obs(vec![a.clone(), b.clone()]), &mut r)
                .unwrap()
            {
                Action::Lemon(BuyerAction::Bid { listing_id }) => {
                    seen.insert(listing_id);
                }
                _ => panic!("random buyer always bids when listings are visible"),
            }
        }
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn random_buyer_passes_when_nothing_visible() {
        let mut policy = RandomBuyerPolicy;
        let action = policy.act(&buyer_obs(vec![]), &mut rng()).unwrap();
        assert_eq!(action, Action::Lemon(BuyerAction::Pass));
    }

    #[test]
    fn policy_spec_roundtrip_and_defaults() {
        let spec: PolicySpec = serde_json::from_str(r#"{"kind": "skeptical_guardian"}"#).unwrap();
        assert_eq!(
            spec,
            PolicySpec::SkepticalGuardian {
                overprice_tolerance: 0.0,
                min_reputation: 0.7
            }
        );
        let spec: PolicySpec = serde_json::from_str(r#"{"kind": "greedy_undercutter"}"#).unwrap();
        assert_eq!(spec, PolicySpec::GreedyUndercutter { epsilon: 0.01 });
        assert!(serde_json::from_str::<PolicySpec>(r#"{"kind": "nonsense"}"#).is_err());
    }
}
