//! Environment sampling: demand chain steps, generation draws, and the
//! full joint transition.
//!
//! [`step_environment`] consumes exactly three draws from its stream, in a
//! fixed order that is part of the reproducibility contract: solar
//! generation, wind generation, next demand.

use crate::config::GridConfig;
use crate::mdp::{battery_step, stage_reward, JointAction, JointState};
use crate::rng::RngStream;
use thiserror::Error;

/// Everything observable about one environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTranscript {
    /// Demand (in power units) the action was played against.
    pub demand_before: u32,
    pub action: JointAction,
    pub reward: f64,
    pub solar_generated: u32,
    pub wind_generated: u32,
    /// Demand (in power units) after the chain stepped.
    pub demand_after: u32,
    pub state_after: JointState,
}

impl StepTranscript {
    /// Demand minus supply, measured against the pre-transition demand.
    pub fn signed_deficit(&self) -> i64 {
        self.demand_before as i64 - self.action.total_supply() as i64
    }
}

/// Violations when stepping the environment.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum StepError {
    #[error("demand index {index} out of range for {n_levels} demand levels")]
    InvalidState { index: usize, n_levels: usize },
    #[error("battery level out of range: solar {solar_level}/{solar_capacity}, wind {wind_level}/{wind_capacity}")]
    BatteryOutOfRange {
        solar_level: u32,
        solar_capacity: u32,
        wind_level: u32,
        wind_capacity: u32,
    },
    #[error("action ({solar_power}, {wind_power}, {main_power}) infeasible in state: levels ({solar_level}, {wind_level}), max_prod {max_prod}")]
    InfeasibleAction {
        solar_power: u32,
        wind_power: u32,
        main_power: u32,
        solar_level: u32,
        wind_level: u32,
        max_prod: u32,
    },
}

/// Samples the next demand index from the transition row of the current one.
pub fn next_demand(demand_index: usize, config: &GridConfig, rng: &mut RngStream) -> usize {
    rng.sample_categorical(config.transition_row(demand_index))
}

/// Samples one source's generated units: Poisson with the given mean.
pub fn sample_generation(mean: f64, rng: &mut RngStream) -> u32 {
    rng.sample_poisson(mean)
}

/// Plays `action` in `state`: rewards against the pre-transition demand,
/// draws both generations, updates both batteries, then steps the demand
/// chain. Exactly three stream draws, in that order.
pub fn step_environment(
    state: JointState,
    action: JointAction,
    config: &GridConfig,
    rng: &mut RngStream,
) -> Result<StepTranscript, StepError> {
    let n_levels = config.n_demand_levels();
    if state.demand_index >= n_levels {
        return Err(StepError::InvalidState {
            index: state.demand_index,
            n_levels,
        });
    }
    if state.solar_level > config.solar_capacity || state.wind_level > config.wind_capacity {
        return Err(StepError::BatteryOutOfRange {
            solar_level: state.solar_level,
            solar_capacity: config.solar_capacity,
            wind_level: state.wind_level,
            wind_capacity: config.wind_capacity,
        });
    }
    if action.solar_power > state.solar_level
        || action.wind_power > state.wind_level
        || action.main_power > config.max_prod
    {
        return Err(StepError::InfeasibleAction {
            solar_power: action.solar_power,
            wind_power: action.wind_power,
            main_power: action.main_power,
            solar_level: state.solar_level,
            wind_level: state.wind_level,
            max_prod: config.max_prod,
        });
    }

    let demand_before = config.demand(state.demand_index);
    let reward = stage_reward(config, demand_before, action);

    let solar_generated = sample_generation(config.gen_mean_solar, rng);
    let wind_generated = sample_generation(config.gen_mean_wind, rng);
    let solar_level = battery_step(
        state.solar_level,
        action.solar_power,
        solar_generated,
        config.solar_capacity,
    )
    .expect("solar usage checked feasible");
    let wind_level = battery_step(
        state.wind_level,
        action.wind_power,
        wind_generated,
        config.wind_capacity,
    )
    .expect("wind usage checked feasible");

    let demand_index = next_demand(state.demand_index, config, rng);
    Ok(StepTranscript {
        demand_before,
        action,
        reward,
        solar_generated,
        wind_generated,
        demand_after: config.demand(demand_index),
        state_after: JointState {
            demand_index,
            solar_level,
            wind_level,
        },
    })
}
