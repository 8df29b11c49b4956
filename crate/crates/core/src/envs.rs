//! Small cooperative environments for CommNet training.
//!
//! * [`CoverageEnv`]: agents move on a grid and are rewarded for the number
//!   of distinct users inside any agent's Chebyshev footprint.
//! * [`EnergyEnv`]: charging stations with batteries, solar input and random
//!   demand share surplus energy through a common pool and pay for grid
//!   purchases and unserved demand.
//!
//! Both are value-semantics state machines: `step` is a pure function of
//! the state (which carries any RNG stream position) and the joint action.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::commnet::JointObservation;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("expected {expected} actions, got {found}")]
    ActionCount { expected: usize, found: usize },
    #[error("agent {agent}: action {action} out of range (0..{limit})")]
    InvalidAction {
        agent: usize,
        action: usize,
        limit: usize,
    },
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("joint placement space {0} exceeds the brute-force limit")]
    TooLarge(u128),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult<S> {
    pub state: S,
    pub observations: JointObservation,
    pub reward: f64,
    pub done: bool,
}

/// Multi-agent episodic environment with a fixed horizon and team reward.
pub trait Environment: Sync {
    type State: Clone + Send + Sync;

    fn n_agents(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn horizon(&self) -> usize;
    fn reset(&self, seed: u64) -> (Self::State, JointObservation);
    fn step(&self, state: &Self::State, actions: &[usize]) -> Result<StepResult<Self::State>, EnvError>;
    fn render(&self, state: &Self::State) -> String;
}

fn check_actions(actions: &[usize], agents: usize, limit: usize) -> Result<(), EnvError> {
    if actions.len() != agents {
        return Err(EnvError::ActionCount {
            expected: agents,
            found: actions.len(),
        });
    }
    if let Some((agent, &action)) = actions.iter().enumerate().find(|(_, &a)| a >= limit) {
        return Err(EnvError::InvalidAction {
            agent,
            action,
            limit,
        });
    }
    Ok(())
}

/// Tagged config as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvConfig {
    Coverage(CoverageConfig),
    Energy(EnergyConfig),
}

// ---------------------------------------------------------------------------
// Coverage

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    #[serde(rename = "W")]
    pub width: usize,
    #[serde(rename = "H")]
    pub height: usize,
    pub users: Vec<[usize; 2]>,
    pub agents: usize,
    pub radius: usize,
    pub horizon: usize,
    /// Malfunction flag: this agent ignores its actions and stays put.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen_agent: Option<usize>,
}

impl Default for CoverageConfig {
    /// 5x5 grid, two agents, radius 1, two clusters of four users.
    fn default() -> Self {
        Self {
            width: 5,
            height: 5,
            users: vec![
                [0, 0],
                [2, 1],
                [0, 2],
                [1, 2],
                [4, 3],
                [3, 4],
                [4, 4],
                [2, 4],
            ],
            agents: 2,
            radius: 1,
            horizon: 12,
            frozen_agent: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    North,
    South,
    East,
    West,
    Stay,
}

impl Move {
    pub const ALL: [Move; 5] = [Move::North, Move::South, Move::East, Move::West, Move::Stay];
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CoverageState {
    pub positions: Vec<[usize; 2]>,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageEnv {
    config: CoverageConfig,
    // users per cell, row-major
    user_grid: Vec<usize>,
}

impl CoverageEnv {
    pub fn new(config: CoverageConfig) -> Result<Self, EnvError> {
        let bad = |m: String| Err(EnvError::InvalidConfig(m));
        if config.width == 0 || config.height == 0 {
            return bad("grid must be at least 1x1".into());
        }
        if config.agents == 0 {
            return bad("need at least one agent".into());
        }
        if config.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if config.agents > config.width * config.height {
            return bad(format!(
                "{} agents do not fit on distinct cells of a {}x{} grid",
                config.agents, config.width, config.height
            ));
        }
        if let Some(f) = config.frozen_agent.filter(|&f| f >= config.agents) {
            return bad(format!("frozen agent {f} does not exist"));
        }
        let mut user_grid = vec![0; config.width * config.height];
        for &[x, y] in &config.users {
            if x >= config.width || y >= config.height {
                return bad(format!("user at ({x}, {y}) is outside the grid"));
            }
            user_grid[y * config.width + x] += 1;
        }
        Ok(Self { config, user_grid })
    }

    pub fn config(&self) -> &CoverageConfig {
        &self.config
    }

    pub fn cells(&self) -> usize {
        self.config.width * self.config.height
    }

    fn window(&self) -> usize {
        2 * self.config.radius + 1
    }

    fn covers(&self, agent: [usize; 2], cell: [usize; 2]) -> bool {
        agent[0].abs_diff(cell[0]) <= self.config.radius && agent[1].abs_diff(cell[1]) <= self.config.radius
    }

    /// Users inside at least one agent footprint.
    pub fn coverage(&self, positions: &[[usize; 2]]) -> usize {
        self.config
            .users
            .iter()
            .filter(|&&u| positions.iter().any(|&p| self.covers(p, u)))
            .count()
    }

    pub fn apply_move(&self, pos: [usize; 2], mv: Move) -> [usize; 2] {
        let [x, y] = pos;
        match mv {
            Move::North => [x, y.saturating_sub(1)],
            Move::South => [x, (y + 1).min(self.config.height - 1)],
            Move::East => [(x + 1).min(self.config.width - 1), y],
            Move::West => [x.saturating_sub(1), y],
            Move::Stay => pos,
        }
    }

    fn observe(&self, state: &CoverageState) -> JointObservation {
        let (w, h) = (self.config.width, self.config.height);
        let r = self.config.radius as isize;
        let agents = state
            .positions
            .iter()
            .map(|&[x, y]| {
                let mut o = vec![0.0; self.obs_dim()];
                o[y * w + x] = 1.0;
                let mut k = w * h;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (cx, cy) = (x as isize + dx, y as isize + dy);
                        if cx >= 0 && cy >= 0 && (cx as usize) < w && (cy as usize) < h {
                            o[k] = self.user_grid[cy as usize * w + cx as usize] as f64;
                        }
                        k += 1;
                    }
                }
                o
            })
            .collect();
        let mut truth: Vec<f64> = state
            .positions
            .iter()
            .flat_map(|p| [p[0] as f64, p[1] as f64])
            .collect();
        truth.push(state.t as f64);
        JointObservation {
            agents,
            state: Some(truth),
        }
    }

    /// Exhaustive search over joint placements for the best per-step
    /// coverage. Ties go to the lexicographically smallest placement, with
    /// cells ordered row-major and agent 0 most significant.
    pub fn brute_force_optimal(&self) -> Result<(usize, Vec<[usize; 2]>), EnvError> {
        let cells = self.cells() as u128;
        let space = cells.checked_pow(self.config.agents as u32).unwrap_or(u128::MAX);
        if space > BRUTE_FORCE_LIMIT {
            return Err(EnvError::TooLarge(space));
        }
        let w = self.config.width;
        let n = self.config.agents;
        let mut idx = vec![0usize; n];
        let mut best = (0usize, vec![[0, 0]; n]);
        let mut first = true;
        loop {
            let placement: Vec<[usize; 2]> = idx.iter().map(|&c| [c % w, c / w]).collect();
            let value = self.coverage(&placement);
            if first || value > best.0 {
                best = (value, placement);
                first = false;
            }
            // odometer increment, last agent fastest
            let mut a = n;
            loop {
                if a == 0 {
                    return Ok(best);
                }
                a -= 1;
                idx[a] += 1;
                if idx[a] < self.cells() {
                    break;
                }
                idx[a] = 0;
            }
        }
    }
}

pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

impl Environment for CoverageEnv {
    type State = CoverageState;

    fn n_agents(&self) -> usize {
        self.config.agents
    }

    /// One-hot cell index followed by user counts in the `(2r+1)^2` window.
    fn obs_dim(&self) -> usize {
        self.cells() + self.window() * self.window()
    }

    fn n_actions(&self) -> usize {
        Move::ALL.len()
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    /// Agents start on distinct uniformly drawn cells.
    fn reset(&self, seed: u64) -> (CoverageState, JointObservation) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = rand::seq::index::sample(&mut rng, self.cells(), self.config.agents);
        let w = self.config.width;
        let positions = cells.iter().map(|c| [c % w, c / w]).collect();
        let state = CoverageState { positions, t: 0 };
        let obs = self.observe(&state);
        (state, obs)
    }

    fn step(&self, state: &CoverageState, actions: &[usize]) -> Result<StepResult<CoverageState>, EnvError> {
        check_actions(actions, self.config.agents, self.n_actions())?;
        let positions = state
            .positions
            .iter()
            .zip(actions)
            .enumerate()
            .map(|(i, (&p, &a))| {
                if self.config.frozen_agent == Some(i) {
                    p
                } else {
                    self.apply_move(p, Move::ALL[a])
                }
            })
            .collect::<Vec<_>>();
        let reward = self.coverage(&positions) as f64;
        let next = CoverageState {
            positions,
            t: state.t + 1,
        };
        let observations = self.observe(&next);
        Ok(StepResult {
            done: next.t >= self.config.horizon,
            state: next,
            observations,
            reward,
        })
    }

    /// `A` agent, `U` covered user, `u` uncovered user, `.` empty cell.
    fn render(&self, state: &CoverageState) -> String {
        let (w, h) = (self.config.width, self.config.height);
        let mut out = String::with_capacity((w + 1) * h + 16);
        out.push_str(&format!("t={}\n", state.t));
        for y in 0..h {
            for x in 0..w {
                let c = if state.positions.contains(&[x, y]) {
                    'A'
                } else if self.user_grid[y * w + x] > 0 {
                    if state.positions.iter().any(|&p| self.covers(p, [x, y])) {
                        'U'
                    } else {
                        'u'
                    }
                } else {
                    '.'
                };
                out.push(c);
            }
            out.push('\n');
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Energy

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyConfig {
    pub stations: usize,
    pub capacity: f64,
    pub initial_battery: Vec<f64>,
    /// `[station][t]`, cycled when shorter than the horizon.
    pub pv_schedule: Vec<Vec<f64>>,
    /// Grid price per unit by step, cycled.
    pub price_schedule: Vec<f64>,
    pub demand_seed: u64,
    /// Demand per station and step is drawn uniformly from `0..=demand_max` units.
    pub demand_max: u32,
    pub shortfall_penalty: f64,
    pub horizon: usize,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            stations: 3,
            capacity: 4.0,
            initial_battery: vec![2.0, 1.0, 0.0],
            pv_schedule: vec![
                vec![0.0, 1.0, 2.0, 2.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0],
                vec![1.0, 2.0, 3.0, 3.0, 2.0, 1.0],
            ],
            price_schedule: vec![1.0, 1.0, 2.0, 3.0, 3.0, 2.0],
            demand_seed: 0,
            demand_max: 2,
            shortfall_penalty: 5.0,
            horizon: 12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnergyAction {
    /// Meet own demand from solar, then battery; store leftover solar.
    Serve,
    /// Store all solar first and keep the battery for later.
    ChargeFromPv,
    /// Serve, then offer up to one unit of battery to the pool.
    ShareToPool,
    /// Serve, then buy one unit from the grid.
    BuyUnit,
}

impl EnergyAction {
    pub const ALL: [EnergyAction; 4] = [
        EnergyAction::Serve,
        EnergyAction::ChargeFromPv,
        EnergyAction::ShareToPool,
        EnergyAction::BuyUnit,
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyState {
    pub battery: Vec<f64>,
    /// Demand to be met during the current step.
    pub demand: Vec<f64>,
    pub t: usize,
    rng: ChaCha8Rng,
}

/// Per-station energy accounting for one step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StationFlow {
    pub pv: f64,
    pub purchased: f64,
    pub pool_in: f64,
    pub pool_out: f64,
    pub served: f64,
    pub shortfall: f64,
    pub curtailed: f64,
    pub battery_delta: f64,
}

impl StationFlow {
    /// `inputs - outputs - storage change`; zero when energy is conserved.
    pub fn imbalance(&self) -> f64 {
        self.pv + self.purchased + self.pool_in
            - self.served
            - self.pool_out
            - self.curtailed
            - self.battery_delta
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyEnv {
    config: EnergyConfig,
}

impl EnergyEnv {
    pub fn new(config: EnergyConfig) -> Result<Self, EnvError> {
        let bad = |m: String| Err(EnvError::InvalidConfig(m));
        if config.stations == 0 || config.horizon == 0 {
            return bad("stations and horizon must be at least 1".into());
        }
        if !(config.capacity > 0.0 && config.capacity.is_finite()) {
            return bad("capacity must be positive".into());
        }
        if config.initial_battery.len() != config.stations
            || config
                .initial_battery
                .iter()
                .any(|b| !(0.0..=config.capacity).contains(b))
        {
            return bad("initial_battery needs one level in [0, capacity] per station".into());
        }
        if config.pv_schedule.len() != config.stations
            || config
                .pv_schedule
                .iter()
                .any(|s| s.is_empty() || s.iter().any(|g| !(g.is_finite() && *g >= 0.0)))
        {
            return bad("pv_schedule needs a non-empty non-negative row per station".into());
        }
        if config.price_schedule.is_empty()
            || config.price_schedule.iter().any(|p| !(p.is_finite() && *p >= 0.0))
        {
            return bad("price_schedule must be non-empty and non-negative".into());
        }
        if !(config.shortfall_penalty.is_finite() && config.shortfall_penalty >= 0.0) {
            return bad("shortfall_penalty must be non-negative".into());
        }
        Ok(Self { config })
    }

    pub fn config(&self) -> &EnergyConfig {
        &self.config
    }

    fn price(&self, t: usize) -> f64 {
        self.config.price_schedule[t % self.config.price_schedule.len()]
    }

    fn pv(&self, station: usize, t: usize) -> f64 {
        let row = &self.config.pv_schedule[station];
        row[t % row.len()]
    }

    fn draw_demand(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.config.stations)
            .map(|_| rng.random_range(0..=self.config.demand_max) as f64)
            .collect()
    }

    fn observe(&self, state: &EnergyState) -> JointObservation {
        let price = self.price(state.t);
        let agents = (0..self.config.stations)
            .map(|i| vec![state.battery[i] / self.config.capacity, price, state.demand[i]])
            .collect();
        let mut truth = state.battery.clone();
        truth.extend_from_slice(&state.demand);
        truth.push(state.t as f64);
        JointObservation {
            agents,
            state: Some(truth),
        }
    }

    /// Same as [`Environment::step`] but also returns the per-station energy flows.
    pub fn step_with_flows(
        &self,
        state: &EnergyState,
        actions: &[usize],
    ) -> Result<(StepResult<EnergyState>, Vec<StationFlow>), EnvError> {
        let n = self.config.stations;
        check_actions(actions, n, EnergyAction::ALL.len())?;
        let cap = self.config.capacity;
        let price = self.price(state.t);
        let mut battery = state.battery.clone();
        let mut flows = vec![StationFlow::default(); n];
        let mut unmet = vec![0.0; n];
        let mut offers = vec![0.0; n];

        for i in 0..n {
            let f = &mut flows[i];
            let demand = state.demand[i];
            f.pv = self.pv(i, state.t);
            let action = EnergyAction::ALL[actions[i]];
            match action {
                EnergyAction::ChargeFromPv => {
                    let stored = f.pv.min(cap - battery[i]);
                    battery[i] += stored;
                    f.curtailed = f.pv - stored;
                    unmet[i] = demand;
                }
                _ => {
                    let from_pv = f.pv.min(demand);
                    let from_battery = (demand - from_pv).min(battery[i]);
                    battery[i] -= from_battery;
                    unmet[i] = demand - from_pv - from_battery;
                    let leftover = f.pv - from_pv;
                    let stored = leftover.min(cap - battery[i]);
                    battery[i] += stored;
                    f.curtailed = leftover - stored;
                    f.served = from_pv + from_battery;
                }
            }
            match action {
                EnergyAction::ShareToPool => {
                    offers[i] = battery[i].min(1.0);
                    battery[i] -= offers[i];
                }
                EnergyAction::BuyUnit => {
                    f.purchased = 1.0;
                    let used = unmet[i].min(1.0);
                    f.served += used;
                    unmet[i] -= used;
                    let stored = (1.0 - used).min(cap - battery[i]);
                    battery[i] += stored;
                    f.curtailed += 1.0 - used - stored;
                }
                _ => {}
            }
        }

        // pool: stations with unmet demand draw on shared surplus, pro rata when short
        let supply: f64 = offers.iter().sum();
        let requested: f64 = unmet.iter().sum();
        let delivered = supply.min(requested);
        for i in 0..n {
            let received = if requested > 0.0 {
                unmet[i] * (delivered / requested)
            } else {
                0.0
            };
            let given = if supply > 0.0 {
                offers[i] * (delivered / supply)
            } else {
                0.0
            };
            // undelivered offers return to the battery they came from
            battery[i] += offers[i] - given;
            let f = &mut flows[i];
            f.pool_in = received;
            f.pool_out = given;
            f.served += received;
            f.shortfall = unmet[i] - received;
            f.battery_delta = battery[i] - state.battery[i];
        }

        let cost: f64 = flows.iter().map(|f| f.purchased * price).sum();
        let shortfall: f64 = flows.iter().map(|f| f.shortfall).sum();
        let reward = -cost - self.config.shortfall_penalty * shortfall;

        let mut rng = state.rng.clone();
        let demand = self.draw_demand(&mut rng);
        let next = EnergyState {
            battery,
            demand,
            t: state.t + 1,
            rng,
        };
        let observations = self.observe(&next);
        Ok((
            StepResult {
                done: next.t >= self.config.horizon,
                state: next,
                observations,
                reward,
            },
            flows,
        ))
    }
}

impl Environment for EnergyEnv {
    type State = EnergyState;

    fn n_agents(&self) -> usize {
        self.config.stations
    }

    /// Own battery fraction, current grid price, own current demand.
    fn obs_dim(&self) -> usize {
        3
    }

    fn n_actions(&self) -> usize {
        EnergyAction::ALL.len()
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    /// Demand streams are keyed by both the configured demand seed and the
    /// episode seed.
    fn reset(&self, seed: u64) -> (EnergyState, JointObservation) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.demand_seed);
        rng.set_stream(seed);
        let demand = self.draw_demand(&mut rng);
        let state = EnergyState {
            battery: self.config.initial_battery.clone(),
            demand,
            t: 0,
            rng,
        };
        let obs = self.observe(&state);
        (state, obs)
    }

    fn step(&self, state: &EnergyState, actions: &[usize]) -> Result<StepResult<EnergyState>, EnvError> {
        self.step_with_flows(state, actions).map(|(r, _)| r)
    }

    fn render(&self, state: &EnergyState) -> String {
        let mut out = format!("t={} price={}\n", state.t, self.price(state.t));
        for i in 0..self.config.stations {
            out.push_str(&format!(
                "station {i}: battery {:.2}/{:.2} demand {:.0}\n",
                state.battery[i], self.config.capacity, state.demand[i]
            ));
        }
        out
    }
}
