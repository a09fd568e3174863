//! Engine binding for the listing market.

use super::{
    cast_review, clear_bids, consumer_surplus, draw_price_in_bracket, draw_sybil_claim,
    honest_description, sybil_description, update_reputation, BuyerAction, BuyerObservation,
    BuyerTransaction, LemonConfig, Listing, ListingStatus, ListingView, QualityTier,
    SellerIdentity, Vote,
};
use crate::engine::record::{
    IdentitySnapshot, LemonStepData, NewListingRecord, RewardEntry, RosterEntry, RotationRecord,
    Scenario, ShownListings, StepData, VoteRecord,
};
use crate::engine::{Action, Environment, Observation, StepOutcome};
use crate::history::HistoryBuffer;
use crate::metrics::bundle::{
    BuyerExposure, IdentitySummary, LemonBundle, MetricBundle, TxSummary,
};
use crate::rng::RandomSource;
use serde_json::json;
use std::collections::BTreeMap;

struct BuyerState {
    id: String,
    purchases: u64,
    quality_sum: f64,
}

pub struct LemonMarket {
    config: LemonConfig,
    seed: u64,
    /// Every identity ever activated; slots index into this.
    identities: Vec<SellerIdentity>,
    /// Lifetime reputation minimum per identity.
    troughs: Vec<f64>,
    /// Seller slot -> current identity index. The last `sybil_count` slots
    /// belong to the deceptive principal.
    slots: Vec<usize>,
    listings: Vec<Listing>,
    listing_serial: Vec<usize>,
    persona_cursor: usize,
    next_identity_serial: usize,
    buyers: Vec<BuyerState>,
    histories: Vec<HistoryBuffer<BuyerTransaction>>,
    shown_this_step: Vec<Vec<String>>,
    pending_new_listings: Vec<NewListingRecord>,
    // Online metric counters, mirrored by the replay path.
    executed_steps: usize,
    bids_per_step: Vec<u64>,
    honest_tx_per_step: Vec<u64>,
    transactions: Vec<TxSummary>,
    exposures: Vec<BuyerExposure>,
    identity_creation_order: Vec<usize>,
}

impl LemonMarket {
    pub fn new(config: LemonConfig, seed: u64) -> Self {
        let n_sellers = config.n_sellers;
        let n_buyers = config.n_buyers;
        let honest = n_sellers - config.sybil_count;
        let identities: Vec<SellerIdentity> = (0..n_sellers)
            .map(|i| SellerIdentity::new(format!("seller_{i}"), i >= honest))
            .collect();
        let troughs = vec![config.initial_reputation; n_sellers];
        let buyers: Vec<BuyerState> = (0..n_buyers)
            .map(|i| BuyerState {
                id: format!("buyer_{i}"),
                purchases: 0,
                quality_sum: 0.0,
            })
            .collect();
        let histories = (0..n_buyers)
            .map(|_| HistoryBuffer::new(config.history_depth))
            .collect();
        let exposures = buyers
            .iter()
            .map(|b| BuyerExposure {
                buyer: b.id.clone(),
                sybil_shown: 0,
                sybil_bids: 0,
                purchases: 0,
                surplus_total: 0.0,
            })
            .collect();
        Self {
            seed,
            identities,
            troughs,
            slots: (0..n_sellers).collect(),
            listings: Vec::new(),
            listing_serial: vec![0; n_sellers],
            persona_cursor: 0,
            next_identity_serial: n_sellers,
            buyers,
            histories,
            shown_this_step: vec![Vec::new(); n_buyers],
            pending_new_listings: Vec::new(),
            executed_steps: 0,
            bids_per_step: Vec::new(),
            honest_tx_per_step: Vec::new(),
            transactions: Vec::new(),
            exposures,
            identity_creation_order: (0..n_sellers).collect(),
            config,
        }
    }

    pub fn config(&self) -> &LemonConfig {
        &self.config
    }

    pub fn active_sybil_count(&self) -> usize {
        self.slots
            .iter()
            .filter(|&&idx| self.identities[idx].sybil && !self.identities[idx].retired)
            .count()
    }

    pub fn retired_count(&self) -> usize {
        self.identities.iter().filter(|i| i.retired).count()
    }

    fn buyer_index(&self, agent_id: &str) -> usize {
        self.buyers
            .iter()
            .position(|b| b.id == agent_id)
            .expect("unknown buyer id")
    }

    fn active_listing_indices(&self) -> Vec<usize> {
        (0..self.listings.len())
            .filter(|&i| self.listings[i].status == ListingStatus::Active)
            .collect()
    }

    fn identity_has_active_listing(&self, identity_idx: usize) -> bool {
        let id = &self.identities[identity_idx].id;
        self.listings
            .iter()
            .any(|l| &l.seller_id == id && l.status == ListingStatus::Active)
    }

    fn anonymize(&self, buyer_idx: usize, seller_id: &str) -> String {
        let salt = RandomSource::anonymization_salt(self.seed, &self.buyers[buyer_idx].id);
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(salt.to_le_bytes());
        hasher.update(seller_id.as_bytes());
        let digest = hasher.finalize();
        digest.iter().take(5).map(|b| format!("{b:02x}")).collect()
    }

    fn listing_is_sybil(&self, listing: &Listing) -> bool {
        self.identities
            .iter()
            .any(|i| i.id == listing.seller_id && i.sybil)
    }

    fn identity_snapshots(&self) -> Vec<IdentitySnapshot> {
        self.identity_creation_order
            .iter()
            .map(|&idx| {
                let identity = &self.identities[idx];
                IdentitySnapshot {
                    id: identity.id.clone(),
                    sybil: identity.sybil,
                    reputation: identity.reputation(&self.config),
                    retired: identity.retired,
                }
            })
            .collect()
    }

    /// Generate listings for every active identity with no active listing.
    fn generate_listings(&mut self, rng: &mut RandomSource) {
        for slot in 0..self.slots.len() {
            let identity_idx = self.slots[slot];
            if self.identities[identity_idx].retired
                || self.identity_has_active_listing(identity_idx)
            {
                continue;
            }
            let sybil = self.identities[identity_idx].sybil;
            let (true_tier, claimed_tier, description) = if sybil {
                let claimed = draw_sybil_claim(&mut rng.quality_draw);
                let description = sybil_description(self.persona_cursor, claimed);
                self.persona_cursor += 1;
                (QualityTier::Poor, claimed, description)
            } else {
                let tier = QualityTier::ALL
                    [rand::Rng::gen_range(&mut rng.quality_draw, 0..QualityTier::ALL.len())];
                (tier, tier, honest_description(slot, tier))
            };
            let price = draw_price_in_bracket(claimed_tier, &mut rng.quality_draw);
            let seller_id = self.identities[identity_idx].id.clone();
            let serial = self.listing_serial[slot];
            self.listing_serial[slot] += 1;
            let listing_id = format!("{seller_id}_listing_{serial}");
            self.pending_new_listings.push(NewListingRecord {
                listing_id: listing_id.clone(),
                seller_id: seller_id.clone(),
                claimed_tier,
                true_tier,
                price,
                sybil,
            });
            self.listings.push(Listing {
                listing_id,
                seller_id,
                description,
                claimed_tier,
                price,
                true_tier,
                status: ListingStatus::Active,
            });
        }
    }
}

impl Environment for LemonMarket {
    fn scenario(&self) -> Scenario {
        Scenario::Lemon
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn config_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).expect("config serializes")
    }

    fn procedural_roster(&self) -> Vec<RosterEntry> {
        // Initial seller identities; rotated-in identities appear in events.
        self.identities
            .iter()
            .take(self.config.n_sellers)
            .map(|i| RosterEntry {
                agent_id: i.id.clone(),
                policy: if i.sybil {
                    "sybil_seller".into()
                } else {
                    "honest_seller".into()
                },
            })
            .collect()
    }

    fn acting_agents(&self) -> Vec<String> {
        self.buyers.iter().map(|b| b.id.clone()).collect()
    }

    fn begin_step(&mut self, _t: usize, rng: &mut RandomSource) {
        self.pending_new_listings.clear();
        for shown in &mut self.shown_this_step {
            shown.clear();
        }
        self.generate_listings(rng);
    }

    fn observe(&mut self, agent_id: &str, _t: usize, rng: &mut RandomSource) -> Observation {
        let buyer_idx = self.buyer_index(agent_id);
        let active = self.active_listing_indices();
        let sample_size = self.config.dlc.min(active.len());
        let picked =
            rand::seq::index::sample(&mut rng.discovery, active.len(), sample_size).into_vec();
        let mut shown: Vec<usize> = picked.into_iter().map(|i| active[i]).collect();
        shown.sort_unstable();

        let views: Vec<ListingView> = shown
            .iter()
            .map(|&i| {
                let listing = &self.listings[i];
                let reputation = if self.config.rep_visible {
                    let identity = self
                        .identities
                        .iter()
                        .find(|ident| ident.id == listing.seller_id)
                        .expect("listing seller exists");
                    Some(identity.reputation(&self.config))
                } else {
                    None
                };
                ListingView {
                    listing_id: listing.listing_id.clone(),
                    description: listing.description.clone(),
                    reputation,
                    price: listing.price,
                }
            })
            .collect();
        self.shown_this_step[buyer_idx] = shown
            .iter()
            .map(|&i| self.listings[i].listing_id.clone())
            .collect();

        let buyer = &self.buyers[buyer_idx];
        let mean_quality = if buyer.purchases > 0 {
            Some(buyer.quality_sum / buyer.purchases as f64)
        } else {
            None
        };
        Observation::Lemon(BuyerObservation {
            listings: views,
            history: self.histories[buyer_idx].to_vec(),
            mean_quality,
        })
    }

    fn observation_summary(&self, obs: &Observation) -> serde_json::Value {
        match obs {
            Observation::Lemon(o) => json!({
                "listings_shown": o.listings.len(),
                "history_len": o.history.len(),
                "mean_quality": o.mean_quality,
            }),
            Observation::Crash(_) => json!({}),
        }
    }

    fn no_op(&self, _agent_id: &str) -> Action {
        Action::Lemon(BuyerAction::Pass)
    }

    fn validate(&self, agent_id: &str, action: Action) -> Result<Action, String> {
        match &action {
            Action::Lemon(BuyerAction::Pass) => Ok(action),
            Action::Lemon(BuyerAction::Bid { listing_id }) => {
                let buyer_idx = self.buyer_index(agent_id);
                if self.shown_this_step[buyer_idx].contains(listing_id) {
                    Ok(action)
                } else {
                    Err(format!(
                        "bid on listing {listing_id} not shown to this buyer"
                    ))
                }
            }
            Action::Crash(_) => Err("expected a buyer action".into()),
        }
    }

    fn step(
        &mut self,
        _t: usize,
        actions: &[(String, Action)],
        rng: &mut RandomSource,
    ) -> StepOutcome {
        // Sybil exposure accounting from what observe showed this step.
        for (buyer_idx, shown) in self.shown_this_step.iter().enumerate() {
            let count = shown
                .iter()
                .filter(|id| {
                    self.listings
                        .iter()
                        .find(|l| &&l.listing_id == id)
                        .map(|l| self.listing_is_sybil(l))
                        .unwrap_or(false)
                })
                .count() as u64;
            self.exposures[buyer_idx].sybil_shown += count;
        }

        let mut bids: Vec<(String, String)> = Vec::new();
        for (agent_id, action) in actions {
            if let Action::Lemon(BuyerAction::Bid { listing_id }) = action {
                bids.push((agent_id.clone(), listing_id.clone()));
                let buyer_idx = self.buyer_index(agent_id);
                let sybil = self
                    .listings
                    .iter()
                    .find(|l| &l.listing_id == listing_id)
                    .map(|l| self.listing_is_sybil(l))
                    .unwrap_or(false);
                if sybil {
                    self.exposures[buyer_idx].sybil_bids += 1;
                }
            }
        }
        self.bids_per_step.push(bids.len() as u64);

        let clearing = clear_bids(&bids, &mut self.listings, &mut rng.tie_break);

        let mut transactions = Vec::new();
        let mut votes = Vec::new();
        let mut seller_revenue: BTreeMap<String, f64> = BTreeMap::new();
        let mut buyer_surplus: BTreeMap<String, f64> = BTreeMap::new();
        let mut honest_tx = 0u64;

        for (buyer_id, listing_idx) in &clearing.winners {
            let listing = self.listings[*listing_idx].clone();
            let buyer_idx = self.buyer_index(buyer_id);
            let sybil = self.listing_is_sybil(&listing);
            let quality = listing.true_tier.value();
            let surplus = consumer_surplus(quality, listing.price, self.config.max_value);

            self.buyers[buyer_idx].purchases += 1;
            self.buyers[buyer_idx].quality_sum += quality;
            let anonymized_seller = self.anonymize(buyer_idx, &listing.seller_id);
            self.histories[buyer_idx].push(BuyerTransaction {
                anonymized_seller,
                price_paid: listing.price,
                quality_received: quality,
                surplus,
            });

            self.exposures[buyer_idx].purchases += 1;
            self.exposures[buyer_idx].surplus_total += surplus;
            self.transactions.push(TxSummary {
                sybil,
                price: listing.price,
                surplus,
            });
            if !sybil {
                honest_tx += 1;
            }

            *seller_revenue
                .entry(listing.seller_id.clone())
                .or_insert(0.0) += listing.price;
            *buyer_surplus.entry(buyer_id.clone()).or_insert(0.0) += surplus;

            transactions.push(super::LemonTransaction {
                buyer: buyer_id.clone(),
                seller: listing.seller_id.clone(),
                listing_id: listing.listing_id.clone(),
                price: listing.price,
                claimed_tier: listing.claimed_tier,
                true_tier: listing.true_tier,
                surplus,
                sybil,
            });

            // Review the purchase and update the seller's rolling window.
            let vote = cast_review(
                listing.claimed_tier,
                listing.true_tier,
                self.config.p_abstain,
                &mut rng.review_noise,
            );
            votes.push(VoteRecord {
                seller_id: listing.seller_id.clone(),
                vote,
            });
            if vote != Vote::Abstain {
                let identity_idx = self
                    .identities
                    .iter()
                    .position(|i| i.id == listing.seller_id)
                    .expect("seller identity exists");
                update_reputation(&mut self.identities[identity_idx], vote, &self.config);
                let rep = self.identities[identity_idx].reputation(&self.config);
                if rep < self.troughs[identity_idx] {
                    self.troughs[identity_idx] = rep;
                }
            }
        }
        self.honest_tx_per_step.push(honest_tx);

        // Rotate every deceptive identity whose reputation collapsed below
        // the threshold: withdraw its listing, activate a fresh identity.
        let mut rotations = Vec::new();
        for slot in 0..self.slots.len() {
            let identity_idx = self.slots[slot];
            let identity = &self.identities[identity_idx];
            if !identity.sybil || identity.retired {
                continue;
            }
            if identity.reputation(&self.config) < self.config.rotation_threshold {
                let retired_id = identity.id.clone();
                self.identities[identity_idx].retired = true;
                for listing in &mut self.listings {
                    if listing.seller_id == retired_id && listing.status == ListingStatus::Active {
                        listing.status = ListingStatus::Withdrawn;
                    }
                }
                let new_id = format!("seller_{}", self.next_identity_serial);
                self.next_identity_serial += 1;
                let new_idx = self.identities.len();
                self.identities
                    .push(SellerIdentity::new(new_id.clone(), true));
                self.troughs.push(self.config.initial_reputation);
                self.identity_creation_order.push(new_idx);
                self.slots[slot] = new_idx;
                self.listing_serial[slot] = 0;
                rotations.push(RotationRecord {
                    retired: retired_id,
                    activated: new_id,
                });
            }
        }

        let mut rewards: Vec<RewardEntry> = self
            .buyers
            .iter()
            .map(|b| RewardEntry {
                agent_id: b.id.clone(),
                reward: buyer_surplus.get(&b.id).copied().unwrap_or(0.0),
            })
            .collect();
        rewards.extend(
            seller_revenue
                .into_iter()
                .map(|(agent_id, reward)| RewardEntry { agent_id, reward }),
        );

        self.executed_steps += 1;
        let active_listings = self.active_listing_indices().len();
        StepOutcome {
            rewards,
            data: StepData::Lemon(LemonStepData {
                new_listings: std::mem::take(&mut self.pending_new_listings),
                shown: self
                    .shown_this_step
                    .iter()
                    .enumerate()
                    .map(|(i, ids)| ShownListings {
                        buyer: self.buyers[i].id.clone(),
                        listing_ids: ids.clone(),
                    })
                    .collect(),
                transactions,
                failed_bids: clearing.failed,
                votes,
                rotations,
                identities: self.identity_snapshots(),
                active_listings,
            }),
        }
    }

    fn finished(&self) -> bool {
        false
    }

    fn online_bundle(&self) -> MetricBundle {
        MetricBundle::Lemon(LemonBundle {
            sybil_count: self.config.sybil_count,
            horizon: self.config.horizon,
            executed_steps: self.executed_steps,
            bids_per_step: self.bids_per_step.clone(),
            honest_tx_per_step: self.honest_tx_per_step.clone(),
            transactions: self.transactions.clone(),
            per_buyer: self.exposures.clone(),
            identities: self
                .identity_creation_order
                .iter()
                .map(|&idx| {
                    let identity = &self.identities[idx];
                    IdentitySummary {
                        id: identity.id.clone(),
                        sybil: identity.sybil,
                        final_reputation: identity.reputation(&self.config),
                        trough_reputation: self.troughs[idx],
                        retired: identity.retired,
                    }
                })
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Environment;

    fn advance_listings(env: &mut LemonMarket, rng: &mut RandomSource, t: usize) {
        env.begin_step(t, rng);
    }

    #[test]
    fn deceptive_listings_same_step_have_distinct_descriptions() {
        let config = LemonConfig {
            sybil_count: 2,
            ..LemonConfig::default()
        };
        let mut env = LemonMarket::new(config, 8);
        let mut rng = RandomSource::new(8);
        advance_listings(&mut env, &mut rng, 0);
        let deceptive: Vec<&Listing> = env
            .listings
            .iter()
            .filter(|l| env.listing_is_sybil(l))
            .collect();
        assert_eq!(deceptive.len(), 2);
        assert_ne!(deceptive[0].description, deceptive[1].description);
        for listing in deceptive {
            assert_eq!(listing.true_tier, QualityTier::Poor);
            assert!(listing.claimed_tier > QualityTier::Poor);
            let (lo, hi) = listing.claimed_tier.bracket();
            assert!((lo..=hi).contains(&listing.price));
        }
    }

    #[test]
    fn rotation_retires_and_replaces_at_initial_reputation() {
        let config = LemonConfig {
            sybil_count: 3,
            ..LemonConfig::default()
        };
        let mut env = LemonMarket::new(config.clone(), 8);
        let mut rng = RandomSource::new(8);
        advance_listings(&mut env, &mut rng, 0);

        // Force a deceptive identity's reputation below the threshold.
        let slot = config.n_sellers - 1;
        let identity_idx = env.slots[slot];
        let retired_id = env.identities[identity_idx].id.clone();
        for _ in 0..2 {
            update_reputation(&mut env.identities[identity_idx], Vote::Down, &config);
        }
        assert!(env.identities[identity_idx].reputation(&config) < config.rotation_threshold);

        let outcome = env.step(0, &[], &mut rng);
        let crate::engine::StepData::Lemon(data) = outcome.data else {
            panic!()
        };
        assert_eq!(data.rotations.len(), 1);
        assert_eq!(data.rotations[0].retired, retired_id);
        let fresh_idx = env.slots[slot];
        assert_ne!(fresh_idx, identity_idx);
        assert_eq!(env.identities[fresh_idx].reputation(&config), 0.8);
        assert!(env.identities[fresh_idx].votes.is_empty());
        assert!(env.identities[identity_idx].retired);
        assert_eq!(env.active_sybil_count(), config.sybil_count);
        // The retired identity's listing is withdrawn.
        assert!(env
            .listings
            .iter()
            .filter(|l| l.seller_id == retired_id)
            .all(|l| l.status == ListingStatus::Withdrawn));
    }

    #[test]
    fn rotation_is_noop_without_a_cluster() {
        let config = LemonConfig {
            sybil_count: 0,
            ..LemonConfig::default()
        };
        let mut env = LemonMarket::new(config, 8);
        let mut rng = RandomSource::new(8);
        advance_listings(&mut env, &mut rng, 0);
        let outcome = env.step(0, &[], &mut rng);
        let crate::engine::StepData::Lemon(data) = outcome.data else {
            panic!()
        };
        assert!(data.rotations.is_empty());
        assert_eq!(env.retired_count(), 0);
    }

    #[test]
    fn boundary_reputation_exactly_at_threshold_is_kept() {
        let config = LemonConfig {
            sybil_count: 1,
            ..LemonConfig::default()
        };
        let mut env = LemonMarket::new(config.clone(), 8);
        let mut rng = RandomSource::new(8);
        advance_listings(&mut env, &mut rng, 0);
        let slot = config.n_sellers - 1;
        let identity_idx = env.slots[slot];
        // 3 up, 7 down: exactly the rotation threshold.
        for _ in 0..3 {
            update_reputation(&mut env.identities[identity_idx], Vote::Up, &config);
        }
        for _ in 0..7 {
            update_reputation(&mut env.identities[identity_idx], Vote::Down, &config);
        }
        assert_eq!(env.identities[identity_idx].reputation(&config), 0.3);
        let outcome = env.step(0, &[], &mut rng);
        let crate::engine::StepData::Lemon(data) = outcome.data else {
            panic!()
        };
        assert!(data.rotations.is_empty(), "strict inequality no rotation");
        assert!(!env.identities[identity_idx].retired);
    }
}
