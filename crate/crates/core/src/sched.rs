//! Battery model, client priority, selection policies and dropout simulation.
//!
//! A selected client pays `max(0, est_cost + N(0, jitter²))` energy units for
//! the round. If its battery cannot cover that, it drops out and the battery
//! is drained to zero. Every client, selected or not, then recharges by
//! `recharge_per_round` up to its capacity.
//!
//! The energy-aware policy ranks eligible clients by
//! `w_E·(E − ΔÊ)/E_max + w_L·link + w_S·min(staleness/S_max, 1)`, where a client
//! is eligible only if `E ≥ margin·ΔÊ`.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Random,
    EnergyAware,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::Random => "random",
            Policy::EnergyAware => "energy_aware",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyState {
    pub energy: f64,
    pub capacity: f64,
    pub link_quality: f64,
    pub staleness: u32,
    pub recharge_per_round: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostModel {
    pub base_cost: f64,
    pub cost_per_epoch: f64,
    pub cost_per_kparam: f64,
    pub cost_jitter_std: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            base_cost: 1.0,
            cost_per_epoch: 0.5,
            cost_per_kparam: 0.05,
            cost_jitter_std: 0.1,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_cost > 0.0) {
            return Err(Error::Param("cost.base_cost must be positive".into()));
        }
        for (name, v) in [
            ("cost_per_epoch", self.cost_per_epoch),
            ("cost_per_kparam", self.cost_per_kparam),
            ("cost_jitter_std", self.cost_jitter_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Param(format!("cost.{name} must be non-negative")));
            }
        }
        Ok(())
    }
}

/// `base + epochs·per_epoch + (params/1000)·per_kparam`
pub fn estimated_cost(cost: &CostModel, train: &TrainConfig, param_count: usize) -> f64 {
    cost.base_cost + train.local_epochs as f64 * cost.cost_per_epoch + param_count as f64 / 1000.0 * cost.cost_per_kparam
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerConfig {
    /// `(w_E, w_L, w_S)`
    pub weights: [f64; 3],
    pub staleness_cap: u32,
    pub margin: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            weights: [1.0, 0.5, 0.5],
            staleness_cap: 5,
            margin: 1.1,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Param("scheduler.weights must be non-negative".into()));
        }
        if self.staleness_cap == 0 {
            return Err(Error::Param("scheduler.staleness_cap must be >= 1".into()));
        }
        if !(self.margin >= 1.0 && self.margin.is_finite()) {
            return Err(Error::Param("scheduler.margin must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn is_eligible(state: &EnergyState, est_cost: f64, margin: f64) -> bool {
    state.energy >= margin * est_cost
}

/// Priority score; `-inf` for ineligible clients.
pub fn priority(state: &EnergyState, est_cost: f64, weights: [f64; 3], staleness_cap: u32, margin: f64) -> f64 {
    if !is_eligible(state, est_cost, margin) {
        return f64::NEG_INFINITY;
    }
    let [w_e, w_l, w_s] = weights;
    let stale = (state.staleness as f64 / staleness_cap as f64).min(1.0);
    w_e * (state.energy - est_cost) / state.capacity + w_l * state.link_quality + w_s * stale
}

/// Returns selected ids in ascending order.
///
/// `Random` samples `m` ids uniformly without replacement and ignores
/// eligibility. `EnergyAware` keeps the top `m` eligible clients by priority,
/// ties to the lower id; fewer than `m` eligible means all of them.
pub fn select_clients<R: Rng + ?Sized>(
    states: &[EnergyState],
    m: usize,
    policy: Policy,
    est_cost: f64,
    config: &SchedulerConfig,
    rng: &mut R,
) -> Vec<usize> {
    let m = m.min(states.len());
    let mut chosen = match policy {
        Policy::Random => index::sample(rng, states.len(), m).into_vec(),
        Policy::EnergyAware => {
            let mut ranked: Vec<(usize, f64)> = states
                .iter()
                .enumerate()
                .map(|(i, s)| (i, priority(s, est_cost, config.weights, config.staleness_cap, config.margin)))
                .filter(|(_, p)| p.is_finite())
                .collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            ranked.into_iter().take(m).map(|(i, _)| i).collect()
        }
    };
    chosen.sort_unstable();
    chosen
}

/// Spends the round's energy for one selected client. Recharge and staleness
/// bookkeeping happen in [`end_of_round`].
pub fn simulate_participation<R: Rng + ?Sized>(
    state: &EnergyState,
    est_cost: f64,
    cost: &CostModel,
    rng: &mut R,
) -> (EnergyState, bool) {
    let jitter = if cost.cost_jitter_std > 0.0 {
        cost.cost_jitter_std * rng.sample::<f64, _>(StandardNormal)
    } else {
        0.0
    };
    let actual = (est_cost + jitter).max(0.0);
    let mut next = *state;
    let completed = state.energy >= actual;
    next.energy = if completed { state.energy - actual } else { 0.0 };
    (next, completed)
}

/// Recharges every client and updates staleness.
pub fn end_of_round(state: &mut EnergyState, completed: bool) {
    state.energy = (state.energy + state.recharge_per_round).min(state.capacity);
    state.staleness = if completed { 0 } else { state.staleness + 1 };
}

/// Heterogeneous device population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FleetConfig {
    /// Capacities are log-spaced between these bounds across client ids.
    pub capacity_min: f64,
    pub capacity_max: f64,
    /// Initial charge as a fraction of capacity, drawn uniformly.
    pub initial_charge: [f64; 2],
    pub link_quality: [f64; 2],
    pub recharge_per_round: f64,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self {
            capacity_min: 3.0,
            capacity_max: 12.0,
            initial_charge: [0.3, 1.0],
            link_quality: [0.5, 1.0],
            recharge_per_round: 1.5,
        }
    }
}

impl FleetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.capacity_min > 0.0 && self.capacity_max >= self.capacity_min) {
            return Err(Error::Param("fleet capacities must satisfy 0 < min <= max".into()));
        }
        let [lo, hi] = self.initial_charge;
        if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
            return Err(Error::Param("fleet.initial_charge must be 0 <= lo <= hi <= 1".into()));
        }
        let [lo, hi] = self.link_quality;
        if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
            return Err(Error::Param("fleet.link_quality must be 0 <= lo <= hi <= 1".into()));
        }
        if !(self.recharge_per_round >= 0.0) {
            return Err(Error::Param("fleet.recharge_per_round must be non-negative".into()));
        }
        Ok(())
    }

    pub fn build(&self, num_clients: usize, master_seed: u64) -> Vec<EnergyState> {
        let mut rng = rng::stream(master_seed, Purpose::Fleet, 0, 0);
        let ratio = self.capacity_max / self.capacity_min;
        (0..num_clients)
            .map(|k| {
                let t = if num_clients > 1 { k as f64 / (num_clients - 1) as f64 } else { 0.0 };
                let capacity = self.capacity_min * ratio.powf(t);
                let charge = self.initial_charge[0] + (self.initial_charge[1] - self.initial_charge[0]) * rng.random::<f64>();
                let link = self.link_quality[0] + (self.link_quality[1] - self.link_quality[0]) * rng.random::<f64>();
                EnergyState {
                    energy: charge * capacity,
                    capacity,
                    link_quality: link,
                    staleness: 0,
                    recharge_per_round: self.recharge_per_round,
                }
            })
            .collect()
    }
}

/// One scheduler-trace row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub round: usize,
    pub client_id: usize,
    pub eligible: bool,
    pub priority: f64,
    pub selected: bool,
    pub completed: bool,
    pub energy_before: f64,
    pub energy_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundParticipation {
    pub selected: Vec<usize>,
    pub completed: Vec<usize>,
    pub dropped: Vec<usize>,
    pub trace: Vec<TraceRow>,
}

/// Stateful scheduler driving one simulation.
#[derive(Debug, Clone)]
pub struct Scheduler {
    pub states: Vec<EnergyState>,
    pub policy: Policy,
    pub clients_per_round: usize,
    pub config: SchedulerConfig,
    pub cost: CostModel,
    master_seed: u64,
}

impl Scheduler {
    pub fn new(
        states: Vec<EnergyState>,
        policy: Policy,
        clients_per_round: usize,
        config: SchedulerConfig,
        cost: CostModel,
        master_seed: u64,
    ) -> Result<Self> {
        if clients_per_round == 0 || clients_per_round > states.len() {
            return Err(Error::Param(format!(
                "clients_per_round must be in [1, {}], got {clients_per_round}",
                states.len()
            )));
        }
        config.validate()?;
        cost.validate()?;
        Ok(Self {
            states,
            policy,
            clients_per_round,
            config,
            cost,
            master_seed,
        })
    }

    pub fn num_clients(&self) -> usize {
        self.states.len()
    }

    /// Selects clients, spends their energy, then recharges the whole fleet.
    pub fn run_round(&mut self, round: usize, est_cost: f64) -> RoundParticipation {
        let mut select_rng = rng::stream(self.master_seed, Purpose::Select, round as u64, 0);
        let selected = select_clients(
            &self.states,
            self.clients_per_round,
            self.policy,
            est_cost,
            &self.config,
            &mut select_rng,
        );
        let mut completed = Vec::new();
        let mut dropped = Vec::new();
        let mut trace = Vec::with_capacity(self.states.len());
        for (k, state) in self.states.iter_mut().enumerate() {
            let before = state.energy;
            let eligible = is_eligible(state, est_cost, self.config.margin);
            let prio = priority(state, est_cost, self.config.weights, self.config.staleness_cap, self.config.margin);
            let is_selected = selected.binary_search(&k).is_ok();
            let mut done = false;
            if is_selected {
                let mut rng = rng::stream(self.master_seed, Purpose::Energy, round as u64, k as u64);
                let (next, ok) = simulate_participation(state, est_cost, &self.cost, &mut rng);
                *state = next;
                done = ok;
                if ok {
                    completed.push(k);
                } else {
                    dropped.push(k);
                }
            }
            end_of_round(state, done);
            trace.push(TraceRow {
                round,
                client_id: k,
                eligible,
                priority: prio,
                selected: is_selected,
                completed: done,
                energy_before: before,
                energy_after: state.energy,
            });
        }
        RoundParticipation {
            selected,
            completed,
            dropped,
            trace,
        }
    }
}
