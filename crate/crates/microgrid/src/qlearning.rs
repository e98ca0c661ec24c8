//! Joint tabular Q-learning and policy evaluation rollouts.
//!
//! One trainer step: both agents publish local views, the joint state is
//! reassembled, an epsilon-greedy joint action is selected, the environment
//! steps, and the visited `(state, action)` entry moves toward
//! `reward + gamma * max` over the *feasible* actions of the next state.
//!
//! Evaluation rollouts (greedy policy or the myopic baseline) consume
//! stream draws in the same order as training steps: solar generation,
//! wind generation, next demand. Two rollouts given equal streams therefore
//! see identical demand and generation paths, which is what makes
//! baseline/learned comparisons under a shared evaluation seed exact.

use crate::config::GridConfig;
use crate::env::{next_demand, sample_generation, step_environment, StepTranscript};
use crate::mdp::{
    agent_views, assemble_joint_state, ActionSpace, JointState, Policy, StateSpace,
};
use crate::policy::{epsilon_greedy, greedy_baseline_action, QTable};
use crate::rng::RngStream;
use std::io::Write;
use thiserror::Error;

/// Step-size rule, applied per visited pair: `n` is that pair's visit count
/// including the current update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearningSchedule {
    Constant { alpha0: f64 },
    /// `alpha0 / n^exponent`; exponent in (0.5, 1] gives convergent updates.
    PolynomialDecay { alpha0: f64, exponent: f64 },
}

impl LearningSchedule {
    pub fn alpha(&self, visit: u64) -> f64 {
        debug_assert!(visit >= 1, "visit counts start at 1");
        match *self {
            LearningSchedule::Constant { alpha0 } => alpha0,
            LearningSchedule::PolynomialDecay { alpha0, exponent } => {
                alpha0 / (visit as f64).powf(exponent)
            }
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let check_alpha0 = |alpha0: f64| {
            if alpha0 > 0.0 && alpha0 <= 1.0 {
                Ok(())
            } else {
                Err(TrainError::InvalidAlpha { alpha0 })
            }
        };
        match *self {
            LearningSchedule::Constant { alpha0 } => check_alpha0(alpha0),
            LearningSchedule::PolynomialDecay { alpha0, exponent } => {
                check_alpha0(alpha0)?;
                if exponent > 0.5 && exponent <= 1.0 {
                    Ok(())
                } else {
                    Err(TrainError::InvalidDecayExponent { exponent })
                }
            }
        }
    }
}

/// Failures when configuring a training run.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("epsilon must be in [0, 1], got {epsilon}")]
    InvalidEpsilon { epsilon: f64 },
    #[error("schedule alpha0 must be in (0, 1], got {alpha0}")]
    InvalidAlpha { alpha0: f64 },
    #[error("decay exponent must be in (0.5, 1], got {exponent}")]
    InvalidDecayExponent { exponent: f64 },
    #[error("initial state (demand {demand_index}, solar {solar_level}, wind {wind_level}) is not a state of this config")]
    InvalidInitialState {
        demand_index: usize,
        solar_level: u32,
        wind_level: u32,
    },
}

/// One temporal-difference update on the pair `(state_index, action_index)`.
///
/// The bootstrap target maxes over the actions *feasible in the next
/// state*. Increments the pair's visit count and returns the new Q-value.
/// Panics if an index is out of range.
#[allow(clippy::too_many_arguments)]
pub fn q_update(
    q: &mut QTable,
    states: &StateSpace,
    actions: &ActionSpace,
    state_index: usize,
    action_index: usize,
    reward: f64,
    next_state_index: usize,
    alpha: f64,
    gamma: f64,
) -> f64 {
    let next_best = q.max_feasible(states.state_at(next_state_index), states, actions);
    let old = q.value(state_index, action_index);
    let new = old + alpha * (reward + gamma * next_best - old);
    q.set_value(state_index, action_index, new);
    q.record_visit(state_index, action_index);
    new
}

/// One row of the training log CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRow {
    pub step: u64,
    pub running_avg_deficit: f64,
    pub epsilon: f64,
    pub alpha: f64,
}

/// Periodic training diagnostics; `running_avg_deficit` is the signed
/// deficit averaged over all steps so far.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    rows: Vec<TrainLogRow>,
}

impl TrainLog {
    pub fn rows(&self) -> &[TrainLogRow] {
        &self.rows
    }

    pub const CSV_HEADER: &'static str = "step,running_avg_deficit,epsilon,alpha";

    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for row in &self.rows {
            writeln!(
                out,
                "{},{},{},{}",
                row.step, row.running_avg_deficit, row.epsilon, row.alpha
            )?;
        }
        Ok(())
    }
}

/// An in-progress Q-learning run. Stepping is infallible once constructed:
/// selection only proposes feasible actions.
#[derive(Debug)]
pub struct Trainer {
    config: GridConfig,
    states: StateSpace,
    actions: ActionSpace,
    q: QTable,
    rng: RngStream,
    state: JointState,
    epsilon: f64,
    schedule: LearningSchedule,
    steps_done: u64,
    cumulative_deficit: i64,
    log: TrainLog,
    log_every: u64,
}

impl Trainer {
    /// Starts a run on the root stream of `seed`.
    pub fn new(
        config: &GridConfig,
        schedule: LearningSchedule,
        epsilon: f64,
        seed: u64,
        initial_state: JointState,
    ) -> Result<Trainer, TrainError> {
        Trainer::with_rng(config, schedule, epsilon, RngStream::new(seed), initial_state)
    }

    /// Starts a run on an explicit stream (used by sweeps to hand each run
    /// its own substream).
    pub fn with_rng(
        config: &GridConfig,
        schedule: LearningSchedule,
        epsilon: f64,
        rng: RngStream,
        initial_state: JointState,
    ) -> Result<Trainer, TrainError> {
        config.validate()?;
        schedule.validate()?;
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(TrainError::InvalidEpsilon { epsilon });
        }
        if !initial_state.is_valid(config) {
            return Err(TrainError::InvalidInitialState {
                demand_index: initial_state.demand_index,
                solar_level: initial_state.solar_level,
                wind_level: initial_state.wind_level,
            });
        }
        Ok(Trainer {
            config: config.clone(),
            states: StateSpace::new(config),
            actions: ActionSpace::new(config),
            q: QTable::for_config(config),
            rng,
            state: initial_state,
            epsilon,
            schedule,
            steps_done: 0,
            cumulative_deficit: 0,
            log: TrainLog::default(),
            log_every: u64::MAX,
        })
    }

    /// Records a log row every `every` steps (default: never).
    pub fn log_every(mut self, every: u64) -> Trainer {
        self.log_every = every.max(1);
        self
    }

    /// One environment interaction plus its Q-update.
    pub fn step(&mut self) -> StepTranscript {
        let views = agent_views(self.state);
        let joint = assemble_joint_state(&views, &self.config)
            .expect("views of a valid state reassemble to it");
        let action = epsilon_greedy(&self.q, joint, self.epsilon, &self.config, &mut self.rng);
        let transcript = step_environment(joint, action, &self.config, &mut self.rng)
            .expect("selection only proposes feasible actions");

        let state_index = self.states.index_of(joint);
        let action_index = self.actions.index_of(action);
        let next_state_index = self.states.index_of(transcript.state_after);
        let visit = self.q.visits(state_index, action_index) + 1;
        let alpha = self.schedule.alpha(visit);
        q_update(
            &mut self.q,
            &self.states,
            &self.actions,
            state_index,
            action_index,
            transcript.reward,
            next_state_index,
            alpha,
            self.config.gamma,
        );

        self.state = transcript.state_after;
        self.cumulative_deficit += transcript.signed_deficit();
        self.steps_done += 1;
        if self.steps_done % self.log_every == 0 {
            self.log.rows.push(TrainLogRow {
                step: self.steps_done,
                running_avg_deficit: self.running_avg_deficit(),
                epsilon: self.epsilon,
                alpha,
            });
        }
        transcript
    }

    pub fn run(&mut self, steps: u64) {
        for _ in 0..steps {
            self.step();
        }
    }

    pub fn steps_done(&self) -> u64 {
        self.steps_done
    }

    pub fn running_avg_deficit(&self) -> f64 {
        if self.steps_done == 0 {
            0.0
        } else {
            self.cumulative_deficit as f64 / self.steps_done as f64
        }
    }

    pub fn q(&self) -> &QTable {
        &self.q
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn into_parts(self) -> (QTable, TrainLog) {
        (self.q, self.log)
    }
}

/// Runs Q-learning for `steps` steps and returns the learned table and log.
pub fn train(
    config: &GridConfig,
    schedule: LearningSchedule,
    epsilon: f64,
    steps: u64,
    seed: u64,
    initial_state: JointState,
) -> Result<(QTable, TrainLog), TrainError> {
    let mut trainer = Trainer::new(config, schedule, epsilon, seed, initial_state)?
        .log_every((steps / 1000).max(1));
    trainer.run(steps);
    Ok(trainer.into_parts())
}

/// Horizon-averaged rollout statistics. Deficits are measured against the
/// pre-transition demand of each step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub avg_signed_deficit: f64,
    pub avg_squared_deficit: f64,
    pub avg_main_power: f64,
    pub steps: u64,
}

/// What to roll out during evaluation.
#[derive(Debug, Clone, Copy)]
pub enum RolloutPolicy<'a> {
    /// Greedy playout of a fixed policy through the full battery dynamics.
    Greedy(&'a Policy),
    /// The myopic rule: spend all generation now, top up from the main grid.
    GreedyBaseline,
}

/// Failures when configuring an evaluation rollout.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("evaluation needs at least one step")]
    ZeroSteps,
    #[error("policy covers {got} states but the config has {expected}")]
    PolicyShapeMismatch { expected: usize, got: usize },
    #[error("initial state (demand {demand_index}, solar {solar_level}, wind {wind_level}) is not a state of this config")]
    InvalidInitialState {
        demand_index: usize,
        solar_level: u32,
        wind_level: u32,
    },
}

/// Rolls out `rollout` for `steps` steps on the root stream of `seed`.
pub fn evaluate_policy(
    rollout: RolloutPolicy<'_>,
    config: &GridConfig,
    steps: u64,
    seed: u64,
    initial_state: JointState,
) -> Result<EvalMetrics, EvalError> {
    evaluate_policy_with(rollout, config, steps, &mut RngStream::new(seed), initial_state)
}

/// Rolls out on an explicit stream. Both rollout kinds draw `(solar
/// generation, wind generation, next demand)` per step, so equal streams
/// yield identical sample paths.
pub fn evaluate_policy_with(
    rollout: RolloutPolicy<'_>,
    config: &GridConfig,
    steps: u64,
    rng: &mut RngStream,
    initial_state: JointState,
) -> Result<EvalMetrics, EvalError> {
    config.validate()?;
    if steps == 0 {
        return Err(EvalError::ZeroSteps);
    }
    if !initial_state.is_valid(config) {
        return Err(EvalError::InvalidInitialState {
            demand_index: initial_state.demand_index,
            solar_level: initial_state.solar_level,
            wind_level: initial_state.wind_level,
        });
    }

    let mut signed: i64 = 0;
    let mut squared: i64 = 0;
    let mut main: u64 = 0;
    match rollout {
        RolloutPolicy::Greedy(policy) => {
            let states = StateSpace::new(config);
            let actions = ActionSpace::new(config);
            if policy.len() != states.len() {
                return Err(EvalError::PolicyShapeMismatch {
                    expected: states.len(),
                    got: policy.len(),
                });
            }
            let mut state = initial_state;
            for _ in 0..steps {
                let action = policy.action(states.index_of(state), &actions);
                let transcript = step_environment(state, action, config, rng)
                    .expect("policies are feasible by construction");
                let deficit = transcript.signed_deficit();
                signed += deficit;
                squared += deficit * deficit;
                main += u64::from(action.main_power);
                state = transcript.state_after;
            }
        }
        RolloutPolicy::GreedyBaseline => {
            let mut demand_index = initial_state.demand_index;
            for _ in 0..steps {
                let solar_generated = sample_generation(config.gen_mean_solar, rng);
                let wind_generated = sample_generation(config.gen_mean_wind, rng);
                let demand = config.demand(demand_index);
                let action = greedy_baseline_action(
                    demand,
                    solar_generated,
                    wind_generated,
                    config.max_prod,
                );
                let deficit = demand as i64 - action.total_supply() as i64;
                signed += deficit;
                squared += deficit * deficit;
                main += u64::from(action.main_power);
                demand_index = next_demand(demand_index, config, rng);
            }
        }
    }

    Ok(EvalMetrics {
        avg_signed_deficit: signed as f64 / steps as f64,
        avg_squared_deficit: squared as f64 / steps as f64,
        avg_main_power: main as f64 / steps as f64,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::JointAction;
    use crate::policy::greedy_from_q;

    fn benchmark() -> GridConfig {
        GridConfig::default()
    }

    const CONSTANT: LearningSchedule = LearningSchedule::Constant { alpha0: 0.1 };

    #[test]
    fn q_update_closed_form_examples() {
        let config = benchmark();
        let states = StateSpace::new(&config);
        let actions = ActionSpace::new(&config);
        let mut q = QTable::for_config(&config);

        // Zero table: Q <- 0 + 0.1 * (-4 + 0.9 * 0 - 0) = -0.4.
        let new = q_update(&mut q, &states, &actions, 5, 3, -4.0, 20, 0.1, 0.9);
        assert_eq!(new, -0.4);
        assert_eq!(q.value(5, 3), -0.4);
        assert_eq!(q.visits(5, 3), 1);

        // Next-state max 2.0 on a feasible action: target = 1 + 0.9 * 2.
        let next = JointState {
            demand_index: 0,
            solar_level: 2,
            wind_level: 2,
        };
        let next_index = states.index_of(next);
        let feasible = actions.index_of(JointAction {
            solar_power: 1,
            wind_power: 2,
            main_power: 4,
        });
        q.set_value(next_index, feasible, 2.0);
        let new = q_update(&mut q, &states, &actions, 7, 0, 1.0, next_index, 0.5, 0.9);
        assert_eq!(new, 0.5 * (1.0 + 0.9 * 2.0));

        // gamma = 0: pure reward averaging toward -9.
        let mut q0 = QTable::for_config(&config);
        let new = q_update(&mut q0, &states, &actions, 0, 0, -9.0, 0, 1.0, 0.0);
        assert_eq!(new, -9.0);
    }

    #[test]
    fn q_update_ignores_infeasible_next_actions() {
        let config = benchmark();
        let states = StateSpace::new(&config);
        let actions = ActionSpace::new(&config);
        let mut q = QTable::for_config(&config);
        let next = JointState {
            demand_index: 1,
            solar_level: 0,
            wind_level: 0,
        };
        let next_index = states.index_of(next);
        // Huge value on an action infeasible in `next` must not leak in.
        let infeasible = actions.index_of(JointAction {
            solar_power: 5,
            wind_power: 0,
            main_power: 0,
        });
        q.set_value(next_index, infeasible, 1e6);
        let new = q_update(&mut q, &states, &actions, 3, 2, 0.0, next_index, 1.0, 1.0);
        assert_eq!(new, 0.0, "bootstrap must max over feasible actions only");
    }

    #[test]
    fn q_update_touches_only_its_entry() {
        let config = benchmark();
        let states = StateSpace::new(&config);
        let actions = ActionSpace::new(&config);
        let mut q = QTable::for_config(&config);
        let before = q.clone();
        q_update(&mut q, &states, &actions, 11, 7, -2.0, 40, 0.1, 0.9);
        for state_index in 0..q.n_states() {
            for action_index in 0..q.n_actions() {
                if (state_index, action_index) == (11, 7) {
                    continue;
                }
                assert_eq!(
                    q.value(state_index, action_index),
                    before.value(state_index, action_index)
                );
                assert_eq!(q.visits(state_index, action_index), 0);
            }
        }
    }

    #[test]
    fn schedule_alpha_values() {
        assert_eq!(CONSTANT.alpha(1), 0.1);
        assert_eq!(CONSTANT.alpha(1_000_000), 0.1);
        let poly = LearningSchedule::PolynomialDecay {
            alpha0: 1.0,
            exponent: 0.6,
        };
        assert_eq!(poly.alpha(1), 1.0);
        assert!((poly.alpha(32) - 32f64.powf(-0.6)).abs() < 1e-15);
    }

    #[test]
    fn schedule_validation_rejects_bad_parameters() {
        assert!(LearningSchedule::Constant { alpha0: 0.0 }.validate().is_err());
        assert!(LearningSchedule::Constant { alpha0: 1.5 }.validate().is_err());
        assert!(LearningSchedule::PolynomialDecay {
            alpha0: 0.5,
            exponent: 0.5
        }
        .validate()
        .is_err());
        assert!(LearningSchedule::PolynomialDecay {
            alpha0: 0.5,
            exponent: 1.0
        }
        .validate()
        .is_ok());
    }

    #[test]
    fn zero_steps_leaves_table_and_log_empty() {
        let config = benchmark();
        let (q, log) = train(
            &config,
            CONSTANT,
            0.85,
            0,
            1,
            JointState::full_batteries(&config),
        )
        .unwrap();
        assert_eq!(q, QTable::for_config(&config));
        assert!(log.rows().is_empty());
    }

    #[test]
    fn training_is_reproducible_per_seed() {
        let config = benchmark();
        let start = JointState::full_batteries(&config);
        let (qa, _) = train(&config, CONSTANT, 0.85, 5_000, 42, start).unwrap();
        let (qb, _) = train(&config, CONSTANT, 0.85, 5_000, 42, start).unwrap();
        assert_eq!(qa, qb);
        let (qc, _) = train(&config, CONSTANT, 0.85, 5_000, 43, start).unwrap();
        assert_ne!(qa, qc);
    }

    #[test]
    fn visit_counts_sum_to_steps() {
        let config = benchmark();
        let start = JointState::full_batteries(&config);
        let schedule = LearningSchedule::PolynomialDecay {
            alpha0: 1.0,
            exponent: 0.6,
        };
        let mut trainer = Trainer::new(&config, schedule, 0.85, 7, start).unwrap();
        trainer.run(20_000);
        let q = trainer.q();
        let total: u64 = (0..q.n_states()).map(|s| q.state_visits(s)).sum();
        assert_eq!(total, 20_000);
    }

    #[test]
    fn running_average_matches_transcript_recomputation() {
        let config = benchmark();
        let start = JointState::full_batteries(&config);
        let mut trainer = Trainer::new(&config, CONSTANT, 0.85, 11, start).unwrap();
        let mut sum = 0i64;
        for _ in 0..5_000 {
            sum += trainer.step().signed_deficit();
        }
        assert_eq!(trainer.running_avg_deficit(), sum as f64 / 5_000.0);
    }

    #[test]
    fn train_log_records_requested_cadence() {
        let config = benchmark();
        let start = JointState::full_batteries(&config);
        let mut trainer = Trainer::new(&config, CONSTANT, 0.85, 3, start)
            .unwrap()
            .log_every(250);
        trainer.run(1_000);
        let rows = trainer.log().rows();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].step, 250);
        assert_eq!(rows[3].step, 1_000);
        for row in rows {
            assert_eq!(row.epsilon, 0.85);
            assert_eq!(row.alpha, 0.1);
        }
    }

    #[test]
    fn trainer_rejects_bad_arguments() {
        let config = benchmark();
        let start = JointState::full_batteries(&config);
        assert!(matches!(
            Trainer::new(&config, CONSTANT, 1.5, 0, start),
            Err(TrainError::InvalidEpsilon { .. })
        ));
        let bad_state = JointState {
            demand_index: 9,
            solar_level: 0,
            wind_level: 0,
        };
        assert!(matches!(
            Trainer::new(&config, CONSTANT, 0.5, 0, bad_state),
            Err(TrainError::InvalidInitialState { .. })
        ));
        let mut bad_config = config.clone();
        bad_config.gamma = 1.0;
        assert!(matches!(
            Trainer::new(&bad_config, CONSTANT, 0.5, 0, start),
            Err(TrainError::Config(_))
        ));
    }

    #[test]
    fn evaluation_is_reproducible_and_rejects_zero_steps() {
        let config = benchmark();
        let start = JointState::full_batteries(&config);
        let a = evaluate_policy(RolloutPolicy::GreedyBaseline, &config, 10_000, 9, start).unwrap();
        let b = evaluate_policy(RolloutPolicy::GreedyBaseline, &config, 10_000, 9, start).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.steps, 10_000);
        assert!(matches!(
            evaluate_policy(RolloutPolicy::GreedyBaseline, &config, 0, 9, start),
            Err(EvalError::ZeroSteps)
        ));
    }

    #[test]
    fn rollout_kinds_share_sample_paths_under_equal_streams() {
        // With zero generation and no main-grid budget, both the baseline
        // and any policy face the bare demand sequence; equal streams must
        // then produce exactly equal deficits.
        let config = GridConfig {
            gen_mean_solar: 0.0,
            gen_mean_wind: 0.0,
            max_prod: 0,
            solar_capacity: 0,
            wind_capacity: 0,
            ..benchmark()
        };
        let start = JointState::full_batteries(&config);
        let q = QTable::for_config(&config);
        let policy = greedy_from_q(&q, &config);
        let a = evaluate_policy(RolloutPolicy::GreedyBaseline, &config, 5_000, 17, start).unwrap();
        let b =
            evaluate_policy(RolloutPolicy::Greedy(&policy), &config, 5_000, 17, start).unwrap();
        assert_eq!(a.avg_signed_deficit, b.avg_signed_deficit);
        assert_eq!(a.avg_squared_deficit, b.avg_squared_deficit);
        assert_eq!(a.avg_main_power, 0.0);
        assert_eq!(b.avg_main_power, 0.0);
    }

    #[test]
    fn policy_shape_mismatch_is_rejected() {
        let config = benchmark();
        let other = GridConfig {
            solar_capacity: 1,
            ..benchmark()
        };
        let q = QTable::for_config(&other);
        let policy = greedy_from_q(&q, &other);
        let start = JointState::full_batteries(&config);
        assert!(matches!(
            evaluate_policy(RolloutPolicy::Greedy(&policy), &config, 100, 0, start),
            Err(EvalError::PolicyShapeMismatch { .. })
        ));
    }
}
