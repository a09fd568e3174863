//! Engine binding for the price-competition market.

use super::{
    affordable_quantity, build_firm_observation, clear_market, draw_demand, settle_step,
    ClearingFirm, CrashConfig, FirmAction, FirmHistoryEntry, FirmState, PRICE_FLOOR,
};
use crate::engine::record::{
    CrashStepData, FirmSnapshot, PurchaseClip, RewardEntry, Scenario, StepData,
};
use crate::engine::{Action, Environment, Observation, StepOutcome};
use crate::history::HistoryBuffer;
use crate::metrics::bundle::{CrashBundle, FirmFate, MetricBundle};
use crate::rng::RandomSource;
use serde_json::json;

pub struct CrashMarket {
    config: CrashConfig,
    firms: Vec<FirmState>,
    histories: Vec<HistoryBuffer<FirmHistoryEntry>>,
    // Online metric counters, mirrored by the replay path.
    mean_price_per_step: Vec<f64>,
    alive_after_per_step: Vec<usize>,
    volume_per_step: Vec<u64>,
    demand_per_step: Vec<u64>,
    reward_totals: Vec<f64>,
    executed_steps: usize,
}

impl CrashMarket {
    pub fn new(config: CrashConfig) -> Self {
        let firms: Vec<FirmState> = (0..config.n_firms)
            .map(|i| FirmState::new(format!("firm_{i}"), &config))
            .collect();
        let histories = (0..config.n_firms)
            .map(|_| HistoryBuffer::new(config.history_depth))
            .collect();
        let n = config.n_firms;
        Self {
            config,
            firms,
            histories,
            mean_price_per_step: Vec::new(),
            alive_after_per_step: Vec::new(),
            volume_per_step: Vec::new(),
            demand_per_step: Vec::new(),
            reward_totals: vec![0.0; n],
            executed_steps: 0,
        }
    }

    pub fn config(&self) -> &CrashConfig {
        &self.config
    }

    pub fn firms(&self) -> &[FirmState] {
        &self.firms
    }

    fn firm_index(&self, agent_id: &str) -> usize {
        self.firms
            .iter()
            .position(|f| f.id == agent_id)
            .expect("unknown firm id")
    }
}

impl Environment for CrashMarket {
    fn scenario(&self) -> Scenario {
        Scenario::Crash
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn config_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).expect("config serializes")
    }

    fn acting_agents(&self) -> Vec<String> {
        self.firms
            .iter()
            .filter(|f| f.alive)
            .map(|f| f.id.clone())
            .collect()
    }

    fn observe(&mut self, agent_id: &str, t: usize, rng: &mut RandomSource) -> Observation {
        let idx = self.firm_index(agent_id);
        let obs = build_firm_observation(
            idx,
            &self.firms,
            &self.histories[idx].to_vec(),
            t,
            &self.config,
            &mut rng.discovery,
        );
        Observation::Crash(obs)
    }

    fn observation_summary(&self, obs: &Observation) -> serde_json::Value {
        match obs {
            Observation::Crash(o) => json!({
                "competitors": o.competitor_prices.len(),
                "cash": o.cash,
                "inventory": o.inventory,
            }),
            Observation::Lemon(_) => json!({}),
        }
    }

    fn no_op(&self, agent_id: &str) -> Action {
        // Hold the previously posted price, buy nothing.
        let idx = self.firm_index(agent_id);
        Action::Crash(FirmAction {
            price: self.firms[idx].price,
            buy_quantity: 0,
        })
    }

    fn validate(&self, _agent_id: &str, action: Action) -> Result<Action, String> {
        match action {
            Action::Crash(mut a) => {
                if !a.price.is_finite() || a.price <= 0.0 {
                    return Err(format!(
                        "price must be a strictly positive finite number, got {}",
                        a.price
                    ));
                }
                if a.price < PRICE_FLOOR {
                    a.price = PRICE_FLOOR;
                }
                Ok(Action::Crash(a))
            }
            Action::Lemon(_) => Err("expected a firm action".into()),
        }
    }

    fn step(
        &mut self,
        _t: usize,
        actions: &[(String, Action)],
        rng: &mut RandomSource,
    ) -> StepOutcome {
        let mut purchase_clips = Vec::new();

        // Supply purchases apply before clearing: units bought this step are
        // sellable this step. Purchases beyond affordable cash are clipped.
        let mut granted_by_firm: Vec<(usize, FirmAction)> = Vec::new();
        for (agent_id, action) in actions {
            let idx = self.firm_index(agent_id);
            let a = match action {
                Action::Crash(a) => a.clone(),
                Action::Lemon(_) => unreachable!("validated as firm action"),
            };
            let affordable = affordable_quantity(self.firms[idx].cash, self.config.unit_cost);
            let granted = a.buy_quantity.min(affordable);
            if granted < a.buy_quantity {
                purchase_clips.push(PurchaseClip {
                    agent_id: agent_id.clone(),
                    requested: a.buy_quantity,
                    granted,
                });
            }
            granted_by_firm.push((
                idx,
                FirmAction {
                    price: a.price,
                    buy_quantity: granted,
                },
            ));
        }

        let demand = draw_demand(
            self.config.demand_rate(),
            self.config.n_consumers,
            &mut rng.demand,
        );

        let clearing_firms: Vec<ClearingFirm> = granted_by_firm
            .iter()
            .map(|(idx, a)| ClearingFirm {
                id: self.firms[*idx].id.clone(),
                price: a.price,
                stock: self.firms[*idx].inventory + a.buy_quantity,
            })
            .collect();
        let clearing = clear_market(
            &clearing_firms,
            demand,
            self.config.dlc,
            &mut rng.discovery,
            &mut rng.tie_break,
        );

        let mut rewards = Vec::new();
        let mut snapshots = Vec::new();
        let mut mean_price_sum = 0.0;
        for (pos, (idx, action)) in granted_by_firm.iter().enumerate() {
            let sold = clearing.units_sold[pos];
            let settlement = settle_step(&self.firms[*idx], action, sold, &self.config);
            let tax = self.config.tax_rate * self.firms[*idx].cash.max(0.0);
            self.histories[*idx].push(FirmHistoryEntry {
                price_set: action.price,
                supply_bought: action.buy_quantity,
                units_sold: sold,
                revenue: action.price * sold as f64,
                expenses: self.config.unit_cost * action.buy_quantity as f64
                    + self.config.overhead
                    + tax,
            });
            self.firms[*idx] = settlement.state;
            self.reward_totals[*idx] += settlement.reward;
            rewards.push(RewardEntry {
                agent_id: self.firms[*idx].id.clone(),
                reward: settlement.reward,
            });
            mean_price_sum += action.price;
            snapshots.push(FirmSnapshot {
                agent_id: self.firms[*idx].id.clone(),
                price: self.firms[*idx].price,
                cash: self.firms[*idx].cash,
                inventory: self.firms[*idx].inventory,
                alive: self.firms[*idx].alive,
            });
        }

        self.executed_steps += 1;
        self.mean_price_per_step
            .push(mean_price_sum / granted_by_firm.len().max(1) as f64);
        self.alive_after_per_step
            .push(self.firms.iter().filter(|f| f.alive).count());
        self.volume_per_step.push(clearing.units_sold.iter().sum());
        self.demand_per_step.push(demand);

        StepOutcome {
            rewards,
            data: StepData::Crash(CrashStepData {
                demand,
                purchase_clips,
                transactions: clearing.transactions,
                firms: snapshots,
            }),
        }
    }

    fn finished(&self) -> bool {
        self.firms.iter().all(|f| !f.alive)
    }

    fn online_bundle(&self) -> MetricBundle {
        MetricBundle::Crash(CrashBundle {
            n_firms: self.config.n_firms,
            unit_cost: self.config.unit_cost,
            initial_cash: self.config.initial_cash,
            horizon: self.config.horizon,
            executed_steps: self.executed_steps,
            mean_price_per_step: self.mean_price_per_step.clone(),
            alive_after_per_step: self.alive_after_per_step.clone(),
            volume_per_step: self.volume_per_step.clone(),
            demand_per_step: self.demand_per_step.clone(),
            firms: self
                .firms
                .iter()
                .enumerate()
                .map(|(i, f)| FirmFate {
                    id: f.id.clone(),
                    final_cash: f.cash,
                    alive: f.alive,
                    total_reward: self.reward_totals[i],
                })
                .collect(),
        })
    }
}
