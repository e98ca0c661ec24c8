//! Joint MDP over demand and the two battery-backed sources: state and
//! action spaces with fixed index layouts, battery dynamics, and rewards.
//!
//! Index layouts are part of the public contract (Q-table files and the
//! oracle use them):
//!
//! * states are ordered lexicographically by `(demand_index, solar_level,
//!   wind_level)`;
//! * actions are ordered lexicographically by `(solar_power, wind_power,
//!   main_power)` over the full cuboid `[0, solar_capacity] x
//!   [0, wind_capacity] x [0, max_prod]`, so an action keeps its index in
//!   every state where it is feasible.

use crate::config::{GridConfig, RewardMode};
use thiserror::Error;

/// Joint environment state: demand level index plus both battery levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct JointState {
    pub demand_index: usize,
    pub solar_level: u32,
    pub wind_level: u32,
}

impl JointState {
    /// Lowest demand level, both batteries full. The conventional start state.
    pub fn full_batteries(config: &GridConfig) -> JointState {
        JointState {
            demand_index: 0,
            solar_level: config.solar_capacity,
            wind_level: config.wind_capacity,
        }
    }

    pub fn is_valid(&self, config: &GridConfig) -> bool {
        self.demand_index < config.n_demand_levels()
            && self.solar_level <= config.solar_capacity
            && self.wind_level <= config.wind_capacity
    }
}

/// Joint action: units drawn from each battery and from the main grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct JointAction {
    pub solar_power: u32,
    pub wind_power: u32,
    pub main_power: u32,
}

impl JointAction {
    pub fn total_supply(&self) -> u32 {
        self.solar_power + self.wind_power + self.main_power
    }
}

/// Bijection between [`JointState`] and `0..len()`.
#[derive(Debug, Clone, Copy)]
pub struct StateSpace {
    n_demand: usize,
    solar_capacity: u32,
    wind_capacity: u32,
}

impl StateSpace {
    pub fn new(config: &GridConfig) -> StateSpace {
        StateSpace {
            n_demand: config.n_demand_levels(),
            solar_capacity: config.solar_capacity,
            wind_capacity: config.wind_capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.n_demand * (self.solar_capacity as usize + 1) * (self.wind_capacity as usize + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index_of(&self, state: JointState) -> usize {
        debug_assert!(state.demand_index < self.n_demand);
        debug_assert!(state.solar_level <= self.solar_capacity);
        debug_assert!(state.wind_level <= self.wind_capacity);
        (state.demand_index * (self.solar_capacity as usize + 1) + state.solar_level as usize)
            * (self.wind_capacity as usize + 1)
            + state.wind_level as usize
    }

    pub fn state_at(&self, index: usize) -> JointState {
        assert!(index < self.len(), "state index {index} out of range");
        let wind_stride = self.wind_capacity as usize + 1;
        let solar_stride = self.solar_capacity as usize + 1;
        let wind_level = (index % wind_stride) as u32;
        let rest = index / wind_stride;
        let solar_level = (rest % solar_stride) as u32;
        let demand_index = rest / solar_stride;
        JointState {
            demand_index,
            solar_level,
            wind_level,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = JointState> + '_ {
        (0..self.len()).map(|i| self.state_at(i))
    }
}

/// Bijection between [`JointAction`] and `0..max_len()`, plus per-state
/// feasible subsets. Feasible means `solar_power <= solar_level`,
/// `wind_power <= wind_level`, `main_power <= max_prod`.
#[derive(Debug, Clone, Copy)]
pub struct ActionSpace {
    solar_capacity: u32,
    wind_capacity: u32,
    max_prod: u32,
}

impl ActionSpace {
    pub fn new(config: &GridConfig) -> ActionSpace {
        ActionSpace {
            solar_capacity: config.solar_capacity,
            wind_capacity: config.wind_capacity,
            max_prod: config.max_prod,
        }
    }

    /// Size of the full action cuboid; the Q-table row stride.
    pub fn max_len(&self) -> usize {
        (self.solar_capacity as usize + 1)
            * (self.wind_capacity as usize + 1)
            * (self.max_prod as usize + 1)
    }

    pub fn index_of(&self, action: JointAction) -> usize {
        debug_assert!(action.solar_power <= self.solar_capacity);
        debug_assert!(action.wind_power <= self.wind_capacity);
        debug_assert!(action.main_power <= self.max_prod);
        (action.solar_power as usize * (self.wind_capacity as usize + 1)
            + action.wind_power as usize)
            * (self.max_prod as usize + 1)
            + action.main_power as usize
    }

    pub fn action_at(&self, index: usize) -> JointAction {
        assert!(index < self.max_len(), "action index {index} out of range");
        let main_stride = self.max_prod as usize + 1;
        let wind_stride = self.wind_capacity as usize + 1;
        let main_power = (index % main_stride) as u32;
        let rest = index / main_stride;
        let wind_power = (rest % wind_stride) as u32;
        let solar_power = rest / wind_stride;
        JointAction {
            solar_power: solar_power as u32,
            wind_power,
            main_power,
        }
    }

    pub fn solar_capacity(&self) -> u32 {
        self.solar_capacity
    }

    pub fn wind_capacity(&self) -> u32 {
        self.wind_capacity
    }

    pub fn max_prod(&self) -> u32 {
        self.max_prod
    }

    pub fn is_feasible(&self, state: JointState, action: JointAction) -> bool {
        action.solar_power <= state.solar_level
            && action.wind_power <= state.wind_level
            && action.main_power <= self.max_prod
    }

    pub fn feasible_len(&self, state: JointState) -> usize {
        (state.solar_level as usize + 1)
            * (state.wind_level as usize + 1)
            * (self.max_prod as usize + 1)
    }

    /// The `k`-th feasible action of `state` in enumeration order, decoded
    /// without walking the enumeration. Panics if `k >= feasible_len(state)`.
    pub fn feasible_at(&self, state: JointState, k: usize) -> JointAction {
        assert!(k < self.feasible_len(state), "feasible rank {k} out of range");
        let main_stride = self.max_prod as usize + 1;
        let wind_stride = state.wind_level as usize + 1;
        let main_power = (k % main_stride) as u32;
        let rest = k / main_stride;
        let wind_power = (rest % wind_stride) as u32;
        let solar_power = (rest / wind_stride) as u32;
        JointAction {
            solar_power,
            wind_power,
            main_power,
        }
    }

    /// Global indices of the feasible actions in `state`, ascending (which is
    /// lexicographic order on `(solar_power, wind_power, main_power)`).
    pub fn feasible_indices(&self, state: JointState) -> impl Iterator<Item = usize> + '_ {
        let wind_stride = self.wind_capacity as usize + 1;
        let main_stride = self.max_prod as usize + 1;
        let max_prod = self.max_prod;
        (0..=state.solar_level).flat_map(move |sp| {
            let solar_base = sp as usize * wind_stride;
            (0..=state.wind_level).flat_map(move |wp| {
                let row_base = (solar_base + wp as usize) * main_stride;
                (0..=max_prod).map(move |mp| row_base + mp as usize)
            })
        })
    }
}

/// All joint states in index order.
pub fn enumerate_states(config: &GridConfig) -> Vec<JointState> {
    StateSpace::new(config).iter().collect()
}

/// Feasible actions in `state`, in global index order.
pub fn feasible_actions(state: JointState, config: &GridConfig) -> Vec<JointAction> {
    let space = ActionSpace::new(config);
    space
        .feasible_indices(state)
        .map(|i| space.action_at(i))
        .collect()
}

/// Contract violations in the dynamics and reward operations.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum DynamicsError {
    #[error("battery usage {used} exceeds stored level {level}")]
    UsageExceedsLevel { used: u32, level: u32 },
    #[error("battery level {level} exceeds capacity {capacity}")]
    LevelExceedsCapacity { level: u32, capacity: u32 },
    #[error("cost weight must be in [0, 1], got {c}")]
    CostWeightOutOfRange { c: f64 },
    #[error("reward mode {mode} is not cost-aware")]
    NotCostaware { mode: &'static str },
}

/// One battery update: drain `used`, add `generated`, clip at `capacity`.
pub fn battery_step(
    level: u32,
    used: u32,
    generated: u32,
    capacity: u32,
) -> Result<u32, DynamicsError> {
    if level > capacity {
        return Err(DynamicsError::LevelExceedsCapacity { level, capacity });
    }
    if used > level {
        return Err(DynamicsError::UsageExceedsLevel { used, level });
    }
    Ok(capacity.min(level - used + generated))
}

/// `-(demand - supply)^2` where supply is the action's total.
pub fn reward_deficit(demand: u32, action: JointAction) -> f64 {
    let deficit = demand as i64 - action.total_supply() as i64;
    -((deficit * deficit) as f64)
}

/// Cost-aware reward; `mode` selects the sign of the `(1-c)*main^2` term.
pub fn reward_costaware(
    demand: u32,
    action: JointAction,
    c: f64,
    mode: RewardMode,
) -> Result<f64, DynamicsError> {
    if !(0.0..=1.0).contains(&c) {
        return Err(DynamicsError::CostWeightOutOfRange { c });
    }
    match mode {
        RewardMode::DeficitOnly => Err(DynamicsError::NotCostaware {
            mode: mode.as_str(),
        }),
        RewardMode::CostawareCreditMain => Ok(costaware_terms(demand, action, c, 1.0)),
        RewardMode::CostawarePenalizeMain => Ok(costaware_terms(demand, action, c, -1.0)),
    }
}

fn costaware_terms(demand: u32, action: JointAction, c: f64, main_sign: f64) -> f64 {
    let deficit = demand as i64 - action.total_supply() as i64;
    let squared_deficit = (deficit * deficit) as f64;
    let main = action.main_power as f64;
    -c * squared_deficit + main_sign * (1.0 - c) * (main * main)
}

/// Single-stage reward under the config's reward mode. The config must be
/// validated; `cost_weight_c` is assumed in range.
pub fn stage_reward(config: &GridConfig, demand: u32, action: JointAction) -> f64 {
    match config.reward_mode {
        RewardMode::DeficitOnly => reward_deficit(demand, action),
        RewardMode::CostawareCreditMain => costaware_terms(demand, action, config.cost_weight_c, 1.0),
        RewardMode::CostawarePenalizeMain => {
            costaware_terms(demand, action, config.cost_weight_c, -1.0)
        }
    }
}

/// The two learning agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgentId {
    SolarGrid,
    WindGrid,
}

impl AgentId {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentId::SolarGrid => "solar_grid",
            AgentId::WindGrid => "wind_grid",
        }
    }
}

/// What one agent observes locally: its battery and the shared demand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgentView {
    pub agent_id: AgentId,
    pub local_battery_level: u32,
    pub observed_demand_index: usize,
}

/// Per-agent shares of a joint action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionSplit {
    pub solar_grid: u32,
    pub wind_grid: u32,
    pub main: u32,
}

impl From<ActionSplit> for JointAction {
    fn from(split: ActionSplit) -> JointAction {
        JointAction {
            solar_power: split.solar_grid,
            wind_power: split.wind_grid,
            main_power: split.main,
        }
    }
}

/// Failures when assembling a joint state from per-agent views.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum SyncError {
    #[error("missing view for agent {}", .0.as_str())]
    MissingAgent(AgentId),
    #[error("duplicate view for agent {}", .0.as_str())]
    DuplicateAgent(AgentId),
    #[error("agents disagree on demand: solar_grid observes {solar}, wind_grid observes {wind}")]
    DemandMismatch { solar: usize, wind: usize },
    #[error("demand index {index} out of range for {n_levels} demand levels")]
    DemandIndexOutOfRange { index: usize, n_levels: usize },
    #[error("{} battery level {level} exceeds capacity {capacity}", .agent.as_str())]
    BatteryOverCapacity {
        agent: AgentId,
        level: u32,
        capacity: u32,
    },
}

/// Decomposes a joint state into both agents' local views.
pub fn agent_views(state: JointState) -> [AgentView; 2] {
    [
        AgentView {
            agent_id: AgentId::SolarGrid,
            local_battery_level: state.solar_level,
            observed_demand_index: state.demand_index,
        },
        AgentView {
            agent_id: AgentId::WindGrid,
            local_battery_level: state.wind_level,
            observed_demand_index: state.demand_index,
        },
    ]
}

/// Reassembles the joint state from exactly one view per agent. The views
/// must agree on the observed demand.
pub fn assemble_joint_state(
    views: &[AgentView],
    config: &GridConfig,
) -> Result<JointState, SyncError> {
    let mut solar: Option<AgentView> = None;
    let mut wind: Option<AgentView> = None;
    for view in views {
        let slot = match view.agent_id {
            AgentId::SolarGrid => &mut solar,
            AgentId::WindGrid => &mut wind,
        };
        if slot.is_some() {
            return Err(SyncError::DuplicateAgent(view.agent_id));
        }
        *slot = Some(*view);
    }
    let solar = solar.ok_or(SyncError::MissingAgent(AgentId::SolarGrid))?;
    let wind = wind.ok_or(SyncError::MissingAgent(AgentId::WindGrid))?;

    if solar.observed_demand_index != wind.observed_demand_index {
        return Err(SyncError::DemandMismatch {
            solar: solar.observed_demand_index,
            wind: wind.observed_demand_index,
        });
    }
    let demand_index = solar.observed_demand_index;
    if demand_index >= config.n_demand_levels() {
        return Err(SyncError::DemandIndexOutOfRange {
            index: demand_index,
            n_levels: config.n_demand_levels(),
        });
    }
    for (view, capacity) in [
        (solar, config.solar_capacity),
        (wind, config.wind_capacity),
    ] {
        if view.local_battery_level > capacity {
            return Err(SyncError::BatteryOverCapacity {
                agent: view.agent_id,
                level: view.local_battery_level,
                capacity,
            });
        }
    }
    Ok(JointState {
        demand_index,
        solar_level: solar.local_battery_level,
        wind_level: wind.local_battery_level,
    })
}

/// Splits a joint action into per-agent shares.
pub fn split_action(action: JointAction) -> ActionSplit {
    ActionSplit {
        solar_grid: action.solar_power,
        wind_grid: action.wind_power,
        main: action.main_power,
    }
}

/// A total, feasible mapping from state index to global action index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    actions: Vec<usize>,
}

/// Rejections when constructing a [`Policy`].
#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum PolicyError {
    #[error("policy covers {got} states, expected {expected}")]
    WrongLength { expected: usize, got: usize },
    #[error("action index {action_index} is infeasible in state index {state_index}")]
    Infeasible {
        state_index: usize,
        action_index: usize,
    },
}

impl Policy {
    /// Validates totality and per-state feasibility.
    pub fn from_action_indices(
        actions: Vec<usize>,
        config: &GridConfig,
    ) -> Result<Policy, PolicyError> {
        let states = StateSpace::new(config);
        let space = ActionSpace::new(config);
        if actions.len() != states.len() {
            return Err(PolicyError::WrongLength {
                expected: states.len(),
                got: actions.len(),
            });
        }
        for (state_index, &action_index) in actions.iter().enumerate() {
            let feasible = action_index < space.max_len()
                && space.is_feasible(states.state_at(state_index), space.action_at(action_index));
            if !feasible {
                return Err(PolicyError::Infeasible {
                    state_index,
                    action_index,
                });
            }
        }
        Ok(Policy { actions })
    }

    /// Crate-internal constructor for callers that guarantee feasibility by
    /// construction (argmax over feasible action sets).
    pub(crate) fn from_raw_feasible(actions: Vec<usize>) -> Policy {
        Policy { actions }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn action_index(&self, state_index: usize) -> usize {
        self.actions[state_index]
    }

    pub fn action(&self, state_index: usize, space: &ActionSpace) -> JointAction {
        space.action_at(self.actions[state_index])
    }

    pub fn action_indices(&self) -> &[usize] {
        &self.actions
    }
}
