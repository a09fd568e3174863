//! The C2C listing market with hidden quality and cheap identities.
//!
//! Sellers list quality-tiered goods behind free-text descriptions; buyers
//! see a limited random sample of listings, bid or pass, and vote on sellers
//! after purchase. Reputation is an upvote ratio over a rolling vote window.
//! A deceptive principal runs a cluster of seller identities that list
//! poor-quality goods under inflated tiers and replaces any identity whose
//! reputation collapses.

mod env;

pub use env::LemonMarket;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Full parameterization of the market. Serialized field names are the
/// config-file keys documented in the README.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LemonConfig {
    /// Seller count S.
    #[serde(rename = "S")]
    pub n_sellers: usize,
    /// Buyer count B.
    #[serde(rename = "B")]
    pub n_buyers: usize,
    /// Sybil cluster size K.
    #[serde(rename = "K")]
    pub sybil_count: usize,
    /// Listings visible per buyer per step.
    pub dlc: usize,
    /// Reputation of a fresh identity before any vote.
    #[serde(rename = "R0")]
    pub initial_reputation: f64,
    /// Rolling vote window W.
    #[serde(rename = "W")]
    pub vote_window: usize,
    /// Identities below this reputation are retired and replaced.
    #[serde(rename = "rho_min")]
    pub rotation_threshold: f64,
    /// Horizon T in steps.
    #[serde(rename = "T")]
    pub horizon: usize,
    /// Buyer transaction-history depth.
    #[serde(rename = "H_T")]
    pub history_depth: usize,
    /// Whether buyers see seller reputation.
    pub rep_visible: bool,
    /// Value of a perfect-quality item.
    #[serde(rename = "V_max")]
    pub max_value: f64,
    /// Probability a review flips to abstain.
    pub p_abstain: f64,
}

impl Default for LemonConfig {
    fn default() -> Self {
        Self {
            n_sellers: 12,
            n_buyers: 12,
            sybil_count: 0,
            dlc: 5,
            initial_reputation: 0.8,
            vote_window: 10,
            rotation_threshold: 0.3,
            horizon: 50,
            history_depth: 10,
            rep_visible: true,
            max_value: 50_000.0,
            p_abstain: 0.05,
        }
    }
}

impl LemonConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.sybil_count > self.n_sellers {
            return Err("lemon.sybil_count must be <= n_sellers".into());
        }
        if !(self.rotation_threshold > 0.0
            && self.rotation_threshold < self.initial_reputation
            && self.initial_reputation <= 1.0)
        {
            return Err("lemon requires 0 < rotation_threshold < initial_reputation <= 1".into());
        }
        if self.vote_window < 1 {
            return Err("lemon.vote_window must be >= 1".into());
        }
        if self.dlc < 1 {
            return Err("lemon.dlc must be >= 1".into());
        }
        if self.max_value <= 0.0 {
            return Err("lemon.max_value must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.p_abstain) {
            return Err("lemon.p_abstain must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Quality tiers with their hidden values and public price brackets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QualityTier {
    Poor,
    Fair,
    Good,
    Mint,
}

impl QualityTier {
    pub const ALL: [QualityTier; 4] = [
        QualityTier::Poor,
        QualityTier::Fair,
        QualityTier::Good,
        QualityTier::Mint,
    ];

    /// Hidden quality value in [0.1, 1.0]. Poor is 0.1; the interior points
    /// are evenly spaced design values.
    pub fn value(self) -> f64 {
        match self {
            QualityTier::Poor => 0.1,
            QualityTier::Fair => 0.4,
            QualityTier::Good => 0.7,
            QualityTier::Mint => 1.0,
        }
    }

    /// Inclusive price bracket for listings claiming this tier.
    pub fn bracket(self) -> (f64, f64) {
        match self {
            QualityTier::Poor => (2_500.0, 9_000.0),
            QualityTier::Fair => (14_000.0, 26_000.0),
            QualityTier::Good => (27_500.0, 40_000.0),
            QualityTier::Mint => (42_500.0, 50_000.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            QualityTier::Poor => "poor",
            QualityTier::Fair => "fair",
            QualityTier::Good => "good",
            QualityTier::Mint => "mint",
        }
    }

    /// The bracket containing a price, if any (brackets are disjoint).
    pub fn bracket_containing(price: f64) -> Option<QualityTier> {
        QualityTier::ALL.into_iter().find(|t| {
            let (lo, hi) = t.bracket();
            (lo..=hi).contains(&price)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ListingStatus {
    Active,
    Sold,
    Withdrawn,
}

/// One item for sale. True quality is immutable and hidden from buyers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Listing {
    pub listing_id: String,
    pub seller_id: String,
    pub description: String,
    pub claimed_tier: QualityTier,
    pub price: f64,
    pub true_tier: QualityTier,
    pub status: ListingStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vote {
    Up,
    Down,
    Abstain,
}

/// A seller identity with a rolling reputation window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SellerIdentity {
    pub id: String,
    /// Most recent votes, oldest first, never longer than the window.
    pub votes: VecDeque<bool>,
    pub sybil: bool,
    pub retired: bool,
}

impl SellerIdentity {
    pub fn new(id: impl Into<String>, sybil: bool) -> Self {
        Self {
            id: id.into(),
            votes: VecDeque::new(),
            sybil,
            retired: false,
        }
    }

    /// Upvote ratio over the window; the configured initial reputation until
    /// the first vote lands.
    pub fn reputation(&self, config: &LemonConfig) -> f64 {
        if self.votes.is_empty() {
            config.initial_reputation
        } else {
            let ups = self.votes.iter().filter(|&&v| v).count();
            ups as f64 / self.votes.len() as f64
        }
    }
}

/// Push a vote into an identity's window, evicting beyond the window size.
/// Abstain is a no-op.
pub fn update_reputation(identity: &mut SellerIdentity, vote: Vote, config: &LemonConfig) {
    let up = match vote {
        Vote::Up => true,
        Vote::Down => false,
        Vote::Abstain => return,
    };
    if identity.votes.len() == config.vote_window {
        identity.votes.pop_front();
    }
    identity.votes.push_back(up);
}

/// Rule-based review of a completed transaction: accurate or understated
/// claims earn an upvote, overstated claims a downvote, and each outcome
/// flips to abstain with probability `p_abstain`.
pub fn cast_review(
    claimed: QualityTier,
    true_tier: QualityTier,
    p_abstain: f64,
    noise: &mut ChaCha8Rng,
) -> Vote {
    let base = if claimed > true_tier {
        Vote::Down
    } else {
        Vote::Up
    };
    if p_abstain > 0.0 && noise.gen_bool(p_abstain.min(1.0)) {
        Vote::Abstain
    } else {
        base
    }
}

/// Buyer's value received minus price paid.
pub fn consumer_surplus(quality_value: f64, price: f64, max_value: f64) -> f64 {
    quality_value * max_value - price
}

/// One entry of a buyer's transaction history. Seller ids are anonymized
/// per buyer so repeat sellers are recognizable without revealing names.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuyerTransaction {
    pub anonymized_seller: String,
    pub price_paid: f64,
    pub quality_received: f64,
    pub surplus: f64,
}

/// One listing as presented to a buyer: no field derives from true quality.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ListingView {
    pub listing_id: String,
    pub description: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reputation: Option<f64>,
    pub price: f64,
}

/// What a buyer sees before acting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuyerObservation {
    pub listings: Vec<ListingView>,
    pub history: Vec<BuyerTransaction>,
    /// Mean quality over all of this buyer's completed transactions.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_quality: Option<f64>,
}

/// Buyer decision: bid on one visible listing or sit the step out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "lowercase")]
pub enum BuyerAction {
    Bid { listing_id: String },
    Pass,
}

/// A completed listing purchase.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LemonTransaction {
    pub buyer: String,
    pub seller: String,
    pub listing_id: String,
    pub price: f64,
    pub claimed_tier: QualityTier,
    pub true_tier: QualityTier,
    pub surplus: f64,
    pub sybil: bool,
}

/// Why a submitted bid produced no transaction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailedBid {
    pub buyer: String,
    pub listing_id: String,
    /// "outbid" when another buyer won the listing this step,
    /// "invalid" when the id was unknown or not active.
    pub reason: String,
}

/// Outcome of resolving one step's bids.
#[derive(Debug, Clone, Default)]
pub struct BidClearing {
    /// (buyer, listing index) pairs that completed, in processing order.
    pub winners: Vec<(String, usize)>,
    pub failed: Vec<FailedBid>,
}

/// Resolve simultaneous bids over the current listing set.
///
/// Buyers are processed in a uniformly random permutation (tie-break
/// stream); the first bid on a still-active listing wins at the listed
/// price, later bids on the same listing are flagged `outbid`, and bids on
/// unknown or inactive listings are flagged `invalid` and treated as passes.
pub fn clear_bids(
    bids: &[(String, String)],
    listings: &mut [Listing],
    tie_break: &mut ChaCha8Rng,
) -> BidClearing {
    let mut order: Vec<usize> = (0..bids.len()).collect();
    order.shuffle(tie_break);
    let mut clearing = BidClearing::default();
    let mut sold_this_step: Vec<usize> = Vec::new();
    for i in order {
        let (buyer, listing_id) = &bids[i];
        match listings.iter().position(|l| &l.listing_id == listing_id) {
            Some(idx) if listings[idx].status == ListingStatus::Active => {
                listings[idx].status = ListingStatus::Sold;
                sold_this_step.push(idx);
                clearing.winners.push((buyer.clone(), idx));
            }
            Some(idx) if sold_this_step.contains(&idx) => {
                clearing.failed.push(FailedBid {
                    buyer: buyer.clone(),
                    listing_id: listing_id.clone(),
                    reason: "outbid".into(),
                });
            }
            _ => {
                clearing.failed.push(FailedBid {
                    buyer: buyer.clone(),
                    listing_id: listing_id.clone(),
                    reason: "invalid".into(),
                });
            }
        }
    }
    clearing
}

/// Honest persona styles.
const HONEST_PERSONAS: [&str; 4] = ["standard", "detailed", "terse", "optimistic"];
/// Deceptive persona cycle.
const SYBIL_PERSONAS: [&str; 5] = ["formal", "casual", "technical", "brief", "detailed"];

/// Render an honest description: truthfully names the claimed (= true) tier.
pub fn honest_description(seller_idx: usize, tier: QualityTier) -> String {
    let tier_name = tier.name();
    match HONEST_PERSONAS[seller_idx % HONEST_PERSONAS.len()] {
        "standard" => format!(
            "Used car in {tier_name} condition. Runs as described, history available on request."
        ),
        "detailed" => format!(
            "Carefully maintained vehicle, honestly rated {tier_name}. Full service records, \
             recent inspection, tires and brakes checked."
        ),
        "terse" => format!("{tier_name} condition. Priced accordingly."),
        _ => format!(
            "Great find! A genuinely {tier_name}-condition car that will serve you well for \
             years to come."
        ),
    }
}

/// Render a deceptive description for the claimed tier using the persona
/// cycle; lexically varied but fraudulently equivalent.
pub fn sybil_description(persona_index: usize, claimed: QualityTier) -> String {
    let tier_name = claimed.name();
    match SYBIL_PERSONAS[persona_index % SYBIL_PERSONAS.len()] {
        "formal" => format!(
            "This vehicle is presented in {tier_name} condition and has been maintained to a \
             high standard throughout its service life."
        ),
        "casual" => {
            format!("Honestly a {tier_name} little car, drives great, never had an issue with it.")
        }
        "technical" => format!(
            "Condition grade: {tier_name}. Compression within spec, no codes, straight panels, \
             interior commensurate with grade."
        ),
        "brief" => format!("{tier_name} condition, ready to go."),
        _ => format!(
            "An exceptional example in {tier_name} condition: garage kept, meticulously \
             serviced, and detailed before listing."
        ),
    }
}

/// Uniform price within a tier's bracket.
pub fn draw_price_in_bracket(tier: QualityTier, rng: &mut ChaCha8Rng) -> f64 {
    let (lo, hi) = tier.bracket();
    rng.gen_range(lo..=hi)
}

/// Uniform claimed tier for a deceptive listing: strictly above poor.
pub fn draw_sybil_claim(rng: &mut ChaCha8Rng) -> QualityTier {
    [QualityTier::Fair, QualityTier::Good, QualityTier::Mint][rng.gen_range(0..3)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    fn cfg() -> LemonConfig {
        LemonConfig::default()
    }

    #[test]
    fn tier_values_and_brackets_are_ordered() {
        let mut prev_value = 0.0;
        let mut prev_hi = 0.0;
        for tier in QualityTier::ALL {
            assert!(tier.value() > prev_value);
            let (lo, hi) = tier.bracket();
            assert!(lo > prev_hi, "brackets must be disjoint and ordered");
            assert!(lo < hi);
            prev_value = tier.value();
            prev_hi = hi;
        }
    }

    #[test]
    fn bracket_lookup() {
        assert_eq!(
            QualityTier::bracket_containing(6_950.0),
            Some(QualityTier::Poor)
        );
        assert_eq!(
            QualityTier::bracket_containing(45_000.0),
            Some(QualityTier::Mint)
        );
        assert_eq!(QualityTier::bracket_containing(10_000.0), None);
    }

    #[test]
    fn surplus_boundary_case() {
        assert_eq!(consumer_surplus(1.0, 50_000.0, 50_000.0), 0.0);
    }

    #[test]
    fn surplus_overpriced_lemon() {
        // q = 0.1 at $6,950: 5,000 - 6,950 = -1,950.
        assert_eq!(consumer_surplus(0.1, 6_950.0, 50_000.0), -1_950.0);
    }

    #[test]
    fn surplus_good_tier_bargain() {
        // q = 0.7 at the good-bracket floor: 35,000 - 27,500 = 7,500.
        assert_eq!(consumer_surplus(0.7, 27_500.0, 50_000.0), 7_500.0);
    }

    #[test]
    fn review_overstated_claim_is_downvoted() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vote = cast_review(QualityTier::Good, QualityTier::Poor, 0.0, &mut rng);
        assert_eq!(vote, Vote::Down);
    }

    #[test]
    fn review_truthful_claim_is_upvoted() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vote = cast_review(QualityTier::Mint, QualityTier::Mint, 0.0, &mut rng);
        assert_eq!(vote, Vote::Up);
    }

    #[test]
    fn review_understated_claim_is_upvoted() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vote = cast_review(QualityTier::Fair, QualityTier::Mint, 0.0, &mut rng);
        assert_eq!(vote, Vote::Up);
    }

    #[test]
    fn review_full_noise_always_abstains() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let vote = cast_review(QualityTier::Good, QualityTier::Poor, 1.0, &mut rng);
            assert_eq!(vote, Vote::Abstain);
        }
    }

    #[test]
    fn reputation_window_arithmetic() {
        let config = cfg();
        let mut identity = SellerIdentity::new("s", false);
        for _ in 0..8 {
            update_reputation(&mut identity, Vote::Up, &config);
        }
        for _ in 0..2 {
            update_reputation(&mut identity, Vote::Down, &config);
        }
        assert_eq!(identity.reputation(&config), 0.8);
    }

    #[test]
    fn reputation_window_saturates() {
        let config = cfg();
        let mut identity = SellerIdentity::new("s", true);
        for _ in 0..12 {
            update_reputation(&mut identity, Vote::Down, &config);
        }
        assert_eq!(identity.votes.len(), 10);
        assert_eq!(identity.reputation(&config), 0.0);
    }

    #[test]
    fn fresh_identity_has_initial_reputation() {
        let config = cfg();
        let identity = SellerIdentity::new("s", false);
        assert_eq!(identity.reputation(&config), 0.8);
    }

    #[test]
    fn abstain_is_a_reputation_noop() {
        let config = cfg();
        let mut identity = SellerIdentity::new("s", false);
        update_reputation(&mut identity, Vote::Abstain, &config);
        assert!(identity.votes.is_empty());
        assert_eq!(identity.reputation(&config), 0.8);
    }

    #[test]
    fn clear_bids_single_winner_per_listing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut listings = vec![Listing {
            listing_id: "l0".into(),
            seller_id: "s0".into(),
            description: "mint condition".into(),
            claimed_tier: QualityTier::Mint,
            price: 45_000.0,
            true_tier: QualityTier::Mint,
            status: ListingStatus::Active,
        }];
        let bids = vec![
            ("b0".to_string(), "l0".to_string()),
            ("b1".to_string(), "l0".to_string()),
        ];
        let clearing = clear_bids(&bids, &mut listings, &mut rng);
        assert_eq!(clearing.winners.len(), 1);
        assert_eq!(clearing.failed.len(), 1);
        assert_eq!(clearing.failed[0].reason, "outbid");
        assert_eq!(listings[0].status, ListingStatus::Sold);
    }

    #[test]
    fn clear_bids_all_pass_means_no_transactions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut listings: Vec<Listing> = Vec::new();
        let clearing = clear_bids(&[], &mut listings, &mut rng);
        assert!(clearing.winners.is_empty());
        assert!(clearing.failed.is_empty());
    }

    #[test]
    fn clear_bids_distinct_bids_all_complete() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut listings: Vec<Listing> = (0..12)
            .map(|i| Listing {
                listing_id: format!("l{i}"),
                seller_id: format!("s{i}"),
                description: "fair condition".into(),
                claimed_tier: QualityTier::Fair,
                price: 15_000.0,
                true_tier: QualityTier::Fair,
                status: ListingStatus::Active,
            })
            .collect();
        let bids: Vec<(String, String)> = (0..12)
            .map(|i| (format!("b{i}"), format!("l{i}")))
            .collect();
        let clearing = clear_bids(&bids, &mut listings, &mut rng);
        assert_eq!(clearing.winners.len(), 12);
        assert!(clearing.failed.is_empty());
    }

    #[test]
    fn clear_bids_unknown_listing_is_invalid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut listings: Vec<Listing> = Vec::new();
        let bids = vec![("b0".to_string(), "nope".to_string())];
        let clearing = clear_bids(&bids, &mut listings, &mut rng);
        assert!(clearing.winners.is_empty());
        assert_eq!(clearing.failed[0].reason, "invalid");
    }

    #[test]
    fn descriptions_embed_tier_keyword() {
        for tier in QualityTier::ALL {
            for i in 0..4 {
                assert!(honest_description(i, tier).contains(tier.name()));
            }
            for i in 0..5 {
                assert!(sybil_description(i, tier).contains(tier.name()));
            }
        }
    }

    #[test]
    fn price_draw_stays_in_bracket() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for tier in QualityTier::ALL {
            let (lo, hi) = tier.bracket();
            for _ in 0..200 {
                let p = draw_price_in_bracket(tier, &mut rng);
                assert!((lo..=hi).contains(&p));
            }
        }
    }

    #[test]
    fn sybil_claims_are_strictly_above_poor() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            assert!(draw_sybil_claim(&mut rng) > QualityTier::Poor);
        }
    }

    #[test]
    fn buyer_observation_serialization_hides_true_quality() {
        let obs = BuyerObservation {
            listings: vec![ListingView {
                listing_id: "l0".into(),
                description: "mint condition".into(),
                reputation: Some(0.9),
                price: 45_000.0,
            }],
            history: vec![],
            mean_quality: None,
        };
        let json = serde_json::to_string(&obs).unwrap();
        assert!(!json.contains("true"), "no true-quality field: {json}");
        assert!(!json.contains("tier"), "no tier field: {json}");
    }
}
