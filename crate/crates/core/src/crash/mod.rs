//! The B2C price-competition market.
//!
//! Firms post a price and buy supply each step; consumers arrive via a
//! Poisson process, poll a limited number of firms, and buy one unit from
//! the cheapest polled firm that has stock. Profit is revenue minus supply
//! cost, fixed overhead, and a proportional tax on cash; a firm whose cash
//! goes negative is bankrupt and exits permanently.

mod env;

pub use env::CrashMarket;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

/// Smallest admissible posted price; actions live in the strictly positive reals.
pub const PRICE_FLOOR: f64 = 0.01;

/// Full parameterization of the market. Serialized field names are the
/// config-file keys documented in the README.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrashConfig {
    /// Firm count N.
    #[serde(rename = "N")]
    pub n_firms: usize,
    /// Consumer count M.
    #[serde(rename = "M")]
    pub n_consumers: usize,
    /// Stabilizing-firm count k (consumed by roster construction).
    #[serde(rename = "k")]
    pub stabilizing_firms: usize,
    /// Discovery limit: firms polled per arriving consumer.
    pub dlc: usize,
    /// Initial cash C0.
    #[serde(rename = "C0")]
    pub initial_cash: f64,
    /// Unit supply cost c.
    #[serde(rename = "c")]
    pub unit_cost: f64,
    /// Fixed overhead f per step.
    #[serde(rename = "f")]
    pub overhead: f64,
    /// Proportional tax on (non-negative) cash per step.
    #[serde(rename = "tau")]
    pub tax_rate: f64,
    /// Poisson demand rate lambda; `None` means 0.6 * n_consumers.
    #[serde(rename = "lambda")]
    pub demand_rate: Option<f64>,
    /// Horizon T in steps.
    #[serde(rename = "T")]
    pub horizon: usize,
    /// Observation history depth H.
    #[serde(rename = "H")]
    pub history_depth: usize,
    /// How many competitor prices a firm sees; `None` means all alive others.
    pub firm_visibility: Option<usize>,
}

impl Default for CrashConfig {
    fn default() -> Self {
        Self {
            n_firms: 5,
            n_consumers: 50,
            stabilizing_firms: 0,
            dlc: 3,
            initial_cash: 500.0,
            unit_cost: 1.0,
            overhead: 2.0,
            tax_rate: 0.05,
            demand_rate: None,
            horizon: 100,
            history_depth: 3,
            firm_visibility: None,
        }
    }
}

impl CrashConfig {
    pub fn demand_rate(&self) -> f64 {
        self.demand_rate.unwrap_or(0.6 * self.n_consumers as f64)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_firms < 1 {
            return Err("crash.n_firms must be >= 1".into());
        }
        if self.dlc < 1 || self.dlc > self.n_firms {
            return Err(format!(
                "crash.dlc must satisfy 1 <= dlc <= n_firms ({})",
                self.n_firms
            ));
        }
        if self.unit_cost <= 0.0 {
            return Err("crash.unit_cost must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.tax_rate) {
            return Err("crash.tax_rate must satisfy 0 <= tax < 1".into());
        }
        if self.demand_rate() <= 0.0 {
            return Err("crash.demand_rate must be > 0".into());
        }
        if self.stabilizing_firms > self.n_firms {
            return Err("crash.stabilizing_firms must be <= n_firms".into());
        }
        if let Some(v) = self.firm_visibility {
            if v + 1 > self.n_firms {
                return Err("crash.firm_visibility must be <= n_firms - 1".into());
            }
        }
        Ok(())
    }
}

/// Mutable per-firm simulation state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FirmState {
    pub id: String,
    pub inventory: u64,
    pub cash: f64,
    /// Most recently posted price. Never used for clearing before the first
    /// action; seeds the hold-previous-price no-op at t = 0.
    pub price: f64,
    pub alive: bool,
}

impl FirmState {
    pub fn new(id: impl Into<String>, config: &CrashConfig) -> Self {
        Self {
            id: id.into(),
            inventory: 0,
            cash: config.initial_cash,
            price: config.unit_cost,
            alive: true,
        }
    }
}

/// A firm's simultaneous decision: posted price and supply purchase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmAction {
    pub price: f64,
    pub buy_quantity: u64,
}

/// One row of a firm's own history window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FirmHistoryEntry {
    pub price_set: f64,
    pub supply_bought: u64,
    pub units_sold: u64,
    pub revenue: f64,
    pub expenses: f64,
}

/// What a firm sees before acting: competitor prices from the previous step
/// for its sampled neighbor set, its own books, and its own recent history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FirmObservation {
    pub competitor_prices: Vec<f64>,
    pub inventory: u64,
    pub cash: f64,
    pub unit_cost: f64,
    pub history: Vec<FirmHistoryEntry>,
}

/// One completed unit sale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrashTransaction {
    pub consumer: usize,
    pub seller: String,
    pub price: f64,
    pub quantity: u64,
}

/// Number of consumers arriving this step: Poisson(lambda) capped at the
/// consumer population (each consumer arrives at most once per step).
pub fn draw_demand(lambda: f64, n_consumers: usize, rng: &mut ChaCha8Rng) -> u64 {
    debug_assert!(lambda > 0.0);
    let poisson = Poisson::new(lambda).expect("lambda must be positive and finite");
    let draw = poisson.sample(rng) as u64;
    draw.min(n_consumers as u64)
}

/// A firm as seen by the clearing pass: posted price and sellable stock.
#[derive(Debug, Clone)]
pub struct ClearingFirm {
    pub id: String,
    pub price: f64,
    pub stock: u64,
}

/// Outcome of one clearing pass.
#[derive(Debug, Clone, Default)]
pub struct ClearingResult {
    pub transactions: Vec<CrashTransaction>,
    /// Units sold per firm, indexed like the input slice.
    pub units_sold: Vec<u64>,
}

/// Clear one step of consumer demand.
///
/// Each arriving consumer polls `min(dlc, alive)` distinct firms uniformly
/// (discovery stream) and buys exactly one unit from the cheapest polled firm
/// with stock, falling through to the next-cheapest polled firm when the
/// cheapest is sold out. Price ties are broken uniformly at random
/// (tie-break stream). A consumer whose whole poll is out of stock buys
/// nothing.
pub fn clear_market(
    firms: &[ClearingFirm],
    demand: u64,
    dlc: usize,
    discovery: &mut ChaCha8Rng,
    tie_break: &mut ChaCha8Rng,
) -> ClearingResult {
    let mut result = ClearingResult {
        transactions: Vec::new(),
        units_sold: vec![0; firms.len()],
    };
    if firms.is_empty() {
        return result;
    }
    let mut stock: Vec<u64> = firms.iter().map(|f| f.stock).collect();
    let sample_size = dlc.min(firms.len());

    for consumer in 0..demand as usize {
        let polled = rand::seq::index::sample(discovery, firms.len(), sample_size).into_vec();

        // Walk polled firms in ascending price order; shuffle within each
        // equal-price group so ties resolve uniformly among stocked members.
        let mut by_price = polled;
        by_price.sort_by(|&a, &b| {
            firms[a]
                .price
                .partial_cmp(&firms[b].price)
                .expect("prices are finite")
        });

        let mut chosen: Option<usize> = None;
        let mut i = 0;
        while i < by_price.len() && chosen.is_none() {
            let mut j = i;
            while j < by_price.len() && firms[by_price[j]].price == firms[by_price[i]].price {
                j += 1;
            }
            let group = &mut by_price[i..j];
            if group.len() > 1 {
                group.shuffle(tie_break);
            }
            for &idx in group.iter() {
                if stock[idx] > 0 {
                    chosen = Some(idx);
                    break;
                }
            }
            i = j;
        }

        if let Some(idx) = chosen {
            stock[idx] -= 1;
            result.units_sold[idx] += 1;
            result.transactions.push(CrashTransaction {
                consumer,
                seller: firms[idx].id.clone(),
                price: firms[idx].price,
                quantity: 1,
            });
        }
    }
    result
}

/// Result of settling one firm's step.
#[derive(Debug, Clone)]
pub struct Settlement {
    pub reward: f64,
    pub state: FirmState,
}

/// Apply one step of accounting to a firm.
///
/// reward = P * sold - c * bought - f - tax * max(cash, 0), with the tax
/// based on start-of-step cash. Cash moves by exactly the reward; inventory
/// becomes I + bought - sold. Cash below zero after settlement means the
/// firm is bankrupt and exits permanently.
pub fn settle_step(
    firm: &FirmState,
    action: &FirmAction,
    units_sold: u64,
    config: &CrashConfig,
) -> Settlement {
    debug_assert!(firm.alive);
    debug_assert!(units_sold <= firm.inventory + action.buy_quantity);
    let tax = config.tax_rate * firm.cash.max(0.0);
    let reward = action.price * units_sold as f64
        - config.unit_cost * action.buy_quantity as f64
        - config.overhead
        - tax;
    let cash = firm.cash + reward;
    let state = FirmState {
        id: firm.id.clone(),
        inventory: firm.inventory + action.buy_quantity - units_sold,
        cash,
        price: action.price,
        alive: cash >= 0.0,
    };
    Settlement { reward, state }
}

/// Supply purchase a firm can actually pay for: floor(cash / unit_cost).
pub fn affordable_quantity(cash: f64, unit_cost: f64) -> u64 {
    if cash <= 0.0 {
        0
    } else {
        (cash / unit_cost).floor() as u64
    }
}

/// Build one firm's observation.
///
/// Competitor prices come from the previous step (the prices currently
/// posted by alive competitors); the neighbor set excludes self and dead
/// firms and is capped at `firm_visibility` via a uniform sample. At t = 0
/// there is no previous step, so the competitor list is empty.
pub fn build_firm_observation(
    firm_idx: usize,
    firms: &[FirmState],
    history: &[FirmHistoryEntry],
    t: usize,
    config: &CrashConfig,
    discovery: &mut ChaCha8Rng,
) -> FirmObservation {
    let firm = &firms[firm_idx];
    let mut competitor_prices = Vec::new();
    if t > 0 {
        let mut neighbors: Vec<usize> = (0..firms.len())
            .filter(|&i| i != firm_idx && firms[i].alive)
            .collect();
        if let Some(limit) = config.firm_visibility {
            if neighbors.len() > limit {
                let picked = rand::seq::index::sample(discovery, neighbors.len(), limit).into_vec();
                let mut sampled: Vec<usize> = picked.into_iter().map(|i| neighbors[i]).collect();
                sampled.sort_unstable();
                neighbors = sampled;
            }
        }
        competitor_prices = neighbors.iter().map(|&i| firms[i].price).collect();
    }
    FirmObservation {
        competitor_prices,
        inventory: firm.inventory,
        cash: firm.cash,
        unit_cost: config.unit_cost,
        history: history.to_vec(),
    }
}

/// Poisson draw helper exposed for the demand-rate degenerate case: with a
/// vanishing rate the arrival count is zero with probability approaching one.
pub fn is_degenerate_rate(lambda: f64) -> bool {
    lambda < 1e-12
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RandomSource, Stream};

    fn cfg() -> CrashConfig {
        CrashConfig::default()
    }

    #[test]
    fn poisson_mean_close_to_rate() {
        // lambda = 0.6 * M with M = 50; 3-standard-error band around 30.
        let mut rng = RandomSource::new(8);
        let n = 10_000;
        let total: u64 = (0..n)
            .map(|_| draw_demand(30.0, 1_000_000, rng.stream(Stream::Demand)))
            .sum();
        let mean = total as f64 / n as f64;
        assert!((29.4..=30.6).contains(&mean), "sample mean {mean}");
    }

    #[test]
    fn poisson_degenerate_rate_draws_zero() {
        let mut rng = RandomSource::new(8);
        for _ in 0..100 {
            assert_eq!(draw_demand(1e-9, 50, rng.stream(Stream::Demand)), 0);
        }
    }

    #[test]
    fn poisson_fixed_seed_identical_sequence() {
        let draw_seq = |seed| {
            let mut rng = RandomSource::new(seed);
            (0..32)
                .map(|_| draw_demand(30.0, 50, rng.stream(Stream::Demand)))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw_seq(16), draw_seq(16));
    }

    #[test]
    fn demand_capped_at_consumer_count() {
        let mut rng = RandomSource::new(1);
        for _ in 0..50 {
            assert!(draw_demand(100.0, 10, rng.stream(Stream::Demand)) <= 10);
        }
    }

    #[test]
    fn monopoly_clearing_sells_demand() {
        let mut rng = RandomSource::new(8);
        let firms = vec![ClearingFirm {
            id: "firm_0".into(),
            price: 2.0,
            stock: 10,
        }];
        let result = clear_market(&firms, 3, 1, &mut rng.discovery, &mut rng.tie_break);
        assert_eq!(result.units_sold, vec![3]);
        assert_eq!(result.transactions.len(), 3);
        assert!(result.transactions.iter().all(|t| t.price == 2.0));
    }

    #[test]
    fn cheapest_firm_takes_all_when_fully_visible() {
        // dlc = 2 with two firms: every consumer polls both, so the cheaper
        // firm sells everything while it has stock.
        let mut rng = RandomSource::new(8);
        let firms = vec![
            ClearingFirm {
                id: "a".into(),
                price: 1.5,
                stock: 1_000_000,
            },
            ClearingFirm {
                id: "b".into(),
                price: 2.0,
                stock: 1_000_000,
            },
        ];
        let result = clear_market(&firms, 100, 2, &mut rng.discovery, &mut rng.tie_break);
        assert_eq!(result.units_sold, vec![100, 0]);
    }

    #[test]
    fn equal_price_ties_split_binomially() {
        // Two firms at the same price, both always polled: each sale is a
        // fair coin flip, so sales are Binomial(10000, 0.5); check a
        // 3-standard-deviation band (sd = sqrt(2500) = 50).
        let mut rng = RandomSource::new(8);
        let firms = vec![
            ClearingFirm {
                id: "a".into(),
                price: 2.0,
                stock: u64::MAX,
            },
            ClearingFirm {
                id: "b".into(),
                price: 2.0,
                stock: u64::MAX,
            },
        ];
        let result = clear_market(&firms, 10_000, 2, &mut rng.discovery, &mut rng.tie_break);
        let a = result.units_sold[0] as f64;
        assert!((a - 5_000.0).abs() <= 150.0, "tie split {a}");
    }

    #[test]
    fn stockout_falls_through_to_next_cheapest() {
        let mut rng = RandomSource::new(8);
        let firms = vec![
            ClearingFirm {
                id: "cheap".into(),
                price: 1.0,
                stock: 2,
            },
            ClearingFirm {
                id: "dear".into(),
                price: 3.0,
                stock: 10,
            },
        ];
        let result = clear_market(&firms, 5, 2, &mut rng.discovery, &mut rng.tie_break);
        assert_eq!(result.units_sold, vec![2, 3]);
    }

    #[test]
    fn all_out_of_stock_drops_demand() {
        let mut rng = RandomSource::new(8);
        let firms = vec![ClearingFirm {
            id: "a".into(),
            price: 1.0,
            stock: 0,
        }];
        let result = clear_market(&firms, 4, 1, &mut rng.discovery, &mut rng.tie_break);
        assert!(result.transactions.is_empty());
    }

    #[test]
    fn settle_worked_example() {
        // P = 2.70, sold = 10, bought = 12, c = 1.00, f = 2, tax = 0.05,
        // cash = 1240.50:
        //   r = 27.00 - 12.00 - 2.00 - 62.025 = -49.025
        let config = cfg();
        let firm = FirmState {
            id: "firm_0".into(),
            inventory: 18,
            cash: 1240.50,
            price: 2.65,
            alive: true,
        };
        let action = FirmAction {
            price: 2.70,
            buy_quantity: 12,
        };
        let s = settle_step(&firm, &action, 10, &config);
        assert!((s.reward - (-49.025)).abs() < 1e-9, "reward {}", s.reward);
        assert!(
            (s.state.cash - 1191.475).abs() < 1e-9,
            "cash {}",
            s.state.cash
        );
        assert_eq!(s.state.inventory, 20);
        assert!(s.state.alive);
    }

    #[test]
    fn settle_overhead_only() {
        let mut config = cfg();
        config.tax_rate = 0.0;
        let firm = FirmState {
            id: "f".into(),
            inventory: 0,
            cash: 10.0,
            price: 1.0,
            alive: true,
        };
        let action = FirmAction {
            price: 1.0,
            buy_quantity: 0,
        };
        let s = settle_step(&firm, &action, 0, &config);
        assert_eq!(s.reward, -2.0);
        assert_eq!(s.state.cash, 8.0);
        assert!(s.state.alive);
    }

    #[test]
    fn settle_bankruptcy_boundary() {
        let mut config = cfg();
        config.tax_rate = 0.0;
        let firm = FirmState {
            id: "f".into(),
            inventory: 0,
            cash: 1.0,
            price: 1.0,
            alive: true,
        };
        let action = FirmAction {
            price: 1.0,
            buy_quantity: 0,
        };
        let s = settle_step(&firm, &action, 0, &config);
        assert_eq!(s.state.cash, -1.0);
        assert!(!s.state.alive);
    }

    #[test]
    fn affordability_floor() {
        assert_eq!(affordable_quantity(500.0, 1.0), 500);
        assert_eq!(affordable_quantity(4.9, 1.0), 4);
        assert_eq!(affordable_quantity(-3.0, 1.0), 0);
        assert_eq!(affordable_quantity(10.0, 3.0), 3);
    }

    #[test]
    fn observation_at_start_is_empty() {
        let config = cfg();
        let firms: Vec<FirmState> = (0..5)
            .map(|i| FirmState::new(format!("firm_{i}"), &config))
            .collect();
        let mut rng = RandomSource::new(8);
        let obs = build_firm_observation(0, &firms, &[], 0, &config, &mut rng.discovery);
        assert!(obs.competitor_prices.is_empty());
        assert!(obs.history.is_empty());
    }

    #[test]
    fn observation_full_visibility_sees_all_others() {
        let config = cfg();
        let firms: Vec<FirmState> = (0..5)
            .map(|i| FirmState::new(format!("firm_{i}"), &config))
            .collect();
        let mut rng = RandomSource::new(8);
        let obs = build_firm_observation(2, &firms, &[], 1, &config, &mut rng.discovery);
        assert_eq!(obs.competitor_prices.len(), 4);
    }

    #[test]
    fn observation_excludes_dead_firms() {
        let config = cfg();
        let mut firms: Vec<FirmState> = (0..5)
            .map(|i| FirmState::new(format!("firm_{i}"), &config))
            .collect();
        firms[1].alive = false;
        firms[3].alive = false;
        let mut rng = RandomSource::new(8);
        let obs = build_firm_observation(0, &firms, &[], 4, &config, &mut rng.discovery);
        assert_eq!(obs.competitor_prices.len(), 2);
    }

    #[test]
    fn observation_visibility_knob_limits_sample() {
        let mut config = cfg();
        config.firm_visibility = Some(2);
        let firms: Vec<FirmState> = (0..5)
            .map(|i| FirmState::new(format!("firm_{i}"), &config))
            .collect();
        let mut rng = RandomSource::new(8);
        let obs = build_firm_observation(0, &firms, &[], 1, &config, &mut rng.discovery);
        assert_eq!(obs.competitor_prices.len(), 2);
    }
}
