//! Exact solution of the joint MDP: closed-form transition kernel, value
//! iteration, exact policy evaluation, and the demand chain's stationary
//! distribution.
//!
//! The joint kernel factorizes: demand steps by its matrix row, and each
//! battery moves independently as `level' = min(capacity, level - used +
//! generated)` with Poisson generation, so
//! `P(s' | s, a) = P_demand * K_solar * K_wind`. Probability mass of
//! generation beyond what the battery can absorb is lumped onto the full
//! level, which keeps every row an exact distribution.

use crate::config::GridConfig;
use crate::mdp::{ActionSpace, JointState, Policy, StateSpace};
use crate::policy::QTable;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Dense exact model over `(state index, global action index)`. Rows for
/// infeasible pairs are all-zero and flagged infeasible.
#[derive(Debug, Clone)]
pub struct ExactModel {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    states: StateSpace,
    actions: ActionSpace,
    transition: Vec<f64>,
    reward: Vec<f64>,
    feasible: Vec<bool>,
}

impl ExactModel {
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn state_space(&self) -> &StateSpace {
        &self.states
    }

    pub fn action_space(&self) -> &ActionSpace {
        &self.actions
    }

    pub fn is_feasible(&self, state_index: usize, action_index: usize) -> bool {
        self.feasible[state_index * self.n_actions + action_index]
    }

    /// Exact next-state distribution of a feasible pair, over state indices.
    pub fn transition_row(&self, state_index: usize, action_index: usize) -> &[f64] {
        let base = (state_index * self.n_actions + action_index) * self.n_states;
        &self.transition[base..base + self.n_states]
    }

    pub fn reward(&self, state_index: usize, action_index: usize) -> f64 {
        self.reward[state_index * self.n_actions + action_index]
    }
}

/// One battery's exact next-level distribution for every post-usage level.
/// Row `base` (the level after draining, before generation) gives
/// `P(level' | base)` over `0..=capacity`; mass of generation that would
/// overfill is lumped at `capacity`.
fn battery_kernel(mean: f64, capacity: u32) -> Vec<f64> {
    let width = capacity as usize + 1;
    let mut kernel = vec![0.0; width * width];
    for base in 0..width {
        let room = capacity as usize - base;
        let mut pmf = (-mean).exp();
        let mut below_cap = 0.0;
        for grown in 0..room {
            kernel[base * width + base + grown] = pmf;
            below_cap += pmf;
            pmf *= mean / (grown + 1) as f64;
        }
        kernel[base * width + capacity as usize] = (1.0 - below_cap).max(0.0);
    }
    kernel
}

/// Builds the closed-form model of a validated configuration.
pub fn build_exact_model(config: &GridConfig) -> Result<ExactModel, crate::config::ConfigError> {
    config.validate()?;
    let states = StateSpace::new(config);
    let actions = ActionSpace::new(config);
    let n_states = states.len();
    let n_actions = actions.max_len();
    let entries = n_states
        .checked_mul(n_actions)
        .and_then(|x| x.checked_mul(n_states))
        .expect("model size overflows usize");
    assert!(
        entries <= 1 << 31,
        "dense exact model would need {entries} transition entries; \
         this oracle is sized for small discrete instances"
    );

    let solar_kernel = battery_kernel(config.gen_mean_solar, config.solar_capacity);
    let wind_kernel = battery_kernel(config.gen_mean_wind, config.wind_capacity);
    let solar_width = config.solar_capacity as usize + 1;
    let wind_width = config.wind_capacity as usize + 1;

    let mut model = ExactModel {
        n_states,
        n_actions,
        gamma: config.gamma,
        states,
        actions,
        transition: vec![0.0; entries],
        reward: vec![0.0; n_states * n_actions],
        feasible: vec![false; n_states * n_actions],
    };

    for state_index in 0..n_states {
        let state = states.state_at(state_index);
        let demand_row = config.transition_row(state.demand_index);
        let demand = config.demand(state.demand_index);
        for action_index in actions.feasible_indices(state) {
            let action = actions.action_at(action_index);
            let pair = state_index * n_actions + action_index;
            model.feasible[pair] = true;
            model.reward[pair] = crate::mdp::stage_reward(config, demand, action);

            let solar_base = (state.solar_level - action.solar_power) as usize;
            let wind_base = (state.wind_level - action.wind_power) as usize;
            let row = &mut model.transition[pair * n_states..(pair + 1) * n_states];
            for (next_demand, &p_demand) in demand_row.iter().enumerate() {
                for next_solar in 0..solar_width {
                    let p_ds = p_demand * solar_kernel[solar_base * solar_width + next_solar];
                    if p_ds == 0.0 {
                        continue;
                    }
                    let next_base = states.index_of(JointState {
                        demand_index: next_demand,
                        solar_level: next_solar as u32,
                        wind_level: 0,
                    });
                    for next_wind in 0..wind_width {
                        row[next_base + next_wind] =
                            p_ds * wind_kernel[wind_base * wind_width + next_wind];
                    }
                }
            }
        }
    }
    Ok(model)
}

/// A value function over state indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    pub values: Vec<f64>,
}

impl ValueFunction {
    pub fn sup_distance(&self, other: &ValueFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

/// Output of [`value_iteration`]: optimal values, optimal Q, the greedy
/// optimal policy, the measured Bellman residual, and the sweep count.
#[derive(Debug, Clone)]
pub struct ViSolution {
    pub values: ValueFunction,
    pub q_star: QTable,
    pub policy: Policy,
    pub residual: f64,
    pub sweeps: u32,
}

/// One synchronous Bellman-optimality sweep; returns the updated values.
fn bellman_sweep(model: &ExactModel, values: &[f64], out: &mut [f64]) {
    for state_index in 0..model.n_states() {
        let state = model.state_space().state_at(state_index);
        let mut best = f64::NEG_INFINITY;
        for action_index in model.action_space().feasible_indices(state) {
            let row = model.transition_row(state_index, action_index);
            let expected: f64 = row.iter().zip(values).map(|(p, v)| p * v).sum();
            let q = model.reward(state_index, action_index) + model.gamma() * expected;
            if q > best {
                best = q;
            }
        }
        out[state_index] = best;
    }
}

/// Value iteration to within `tol` of the optimal value function: sweeps
/// stop once the sup-norm change drops below `tol * (1 - gamma) / (2 *
/// gamma)` (one sweep when `gamma == 0`, where a single sweep is exact).
/// The reported residual is the directly measured `||TV - V||` of the
/// returned values.
pub fn value_iteration(model: &ExactModel, tol: f64) -> ViSolution {
    assert!(tol > 0.0, "tolerance must be positive");
    let gamma = model.gamma();
    let threshold = if gamma > 0.0 {
        tol * (1.0 - gamma) / (2.0 * gamma)
    } else {
        f64::INFINITY
    };

    let n = model.n_states();
    let mut values = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut sweeps = 0u32;
    loop {
        bellman_sweep(model, &values, &mut next);
        sweeps += 1;
        let delta = values
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut values, &mut next);
        if delta < threshold || sweeps >= 1_000_000 {
            break;
        }
    }

    // Measure the true Bellman residual of what we return.
    bellman_sweep(model, &values, &mut next);
    let residual = values
        .iter()
        .zip(&next)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let mut q_star = QTable::zeros(n, model.n_actions());
    for state_index in 0..n {
        let state = model.state_space().state_at(state_index);
        for action_index in model.action_space().feasible_indices(state) {
            let row = model.transition_row(state_index, action_index);
            let expected: f64 = row.iter().zip(&values).map(|(p, v)| p * v).sum();
            q_star.set_value(
                state_index,
                action_index,
                model.reward(state_index, action_index) + gamma * expected,
            );
        }
    }

    ViSolution {
        policy: greedy_policy_of(&q_star, model),
        values: ValueFunction { values },
        q_star,
        residual,
        sweeps,
    }
}

fn greedy_policy_of(q: &QTable, model: &ExactModel) -> Policy {
    let indices = (0..model.n_states())
        .map(|i| {
            q.argmax_feasible(
                model.state_space().state_at(i),
                model.state_space(),
                model.action_space(),
            )
        })
        .collect();
    Policy::from_raw_feasible(indices)
}

/// Failures in the oracle's linear-algebra routes.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("matrix of {len} entries is not square of order {n}")]
    NotSquare { len: usize, n: usize },
    #[error("matrix row {row} is not a distribution (sums to {sum})")]
    NonStochasticRow { row: usize, sum: f64 },
    #[error("matrix entry [{row}][{col}] is negative: {value}")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("chain is reducible: no single recurrent class, stationary distribution not unique")]
    Reducible,
    #[error("linear system is singular")]
    SingularSystem,
    #[error("policy covers {got} states but the model has {expected}")]
    PolicyShapeMismatch { expected: usize, got: usize },
}

fn check_policy(model: &ExactModel, policy: &Policy) -> Result<(), OracleError> {
    if policy.len() != model.n_states() {
        return Err(OracleError::PolicyShapeMismatch {
            expected: model.n_states(),
            got: policy.len(),
        });
    }
    Ok(())
}

/// Exact value of a fixed policy by direct linear solve of
/// `(I - gamma * P_pi) V = R_pi`.
pub fn exact_policy_value(
    model: &ExactModel,
    policy: &Policy,
) -> Result<ValueFunction, OracleError> {
    check_policy(model, policy)?;
    let n = model.n_states();
    let mut system = DMatrix::<f64>::identity(n, n);
    let mut rewards = DVector::<f64>::zeros(n);
    for state_index in 0..n {
        let action_index = policy.action_index(state_index);
        let row = model.transition_row(state_index, action_index);
        for (next_index, &p) in row.iter().enumerate() {
            system[(state_index, next_index)] -= model.gamma() * p;
        }
        rewards[state_index] = model.reward(state_index, action_index);
    }
    let solution = system.lu().solve(&rewards).ok_or(OracleError::SingularSystem)?;
    Ok(ValueFunction {
        values: solution.iter().copied().collect(),
    })
}

/// Exact value of a fixed policy by fixed-point iteration, run until the
/// measured residual `||T_pi V - V||` drops below `tol`.
pub fn exact_policy_value_iterative(
    model: &ExactModel,
    policy: &Policy,
    tol: f64,
) -> Result<ValueFunction, OracleError> {
    check_policy(model, policy)?;
    assert!(tol > 0.0, "tolerance must be positive");
    let n = model.n_states();
    let mut values = vec![0.0; n];
    let mut next = vec![0.0; n];
    for _ in 0..1_000_000u64 {
        let mut delta = 0.0f64;
        for state_index in 0..n {
            let action_index = policy.action_index(state_index);
            let row = model.transition_row(state_index, action_index);
            let expected: f64 = row.iter().zip(&values).map(|(p, v)| p * v).sum();
            let updated = model.reward(state_index, action_index) + model.gamma() * expected;
            delta = delta.max((updated - values[state_index]).abs());
            next[state_index] = updated;
        }
        std::mem::swap(&mut values, &mut next);
        // `delta` is the residual of the pre-sweep iterate; the post-sweep
        // iterate's residual is at most gamma times it.
        if delta * model.gamma() < tol {
            break;
        }
    }
    Ok(ValueFunction { values })
}

/// Unique stationary distribution of an irreducible row-stochastic matrix
/// (given row-major, order `n`), solved directly from `pi P = pi`.
pub fn stationary_distribution(matrix: &[f64], n: usize) -> Result<Vec<f64>, OracleError> {
    if matrix.len() != n * n || n == 0 {
        return Err(OracleError::NotSquare {
            len: matrix.len(),
            n,
        });
    }
    for row in 0..n {
        let mut sum = 0.0;
        for col in 0..n {
            let value = matrix[row * n + col];
            if !(value >= 0.0) {
                return Err(OracleError::NegativeEntry { row, col, value });
            }
            sum += value;
        }
        if !((sum - 1.0).abs() <= 1e-9) {
            return Err(OracleError::NonStochasticRow { row, sum });
        }
    }
    if !is_strongly_connected(matrix, n) {
        return Err(OracleError::Reducible);
    }

    // pi (P - I) = 0 with the normalization sum(pi) = 1 replacing one
    // equation: solve (P^T - I) pi = 0, last row replaced by ones = 1.
    let mut system = DMatrix::<f64>::zeros(n, n);
    for row in 0..n {
        for col in 0..n {
            system[(col, row)] = matrix[row * n + col];
        }
    }
    for i in 0..n {
        system[(i, i)] -= 1.0;
    }
    for col in 0..n {
        system[(n - 1, col)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(n);
    rhs[n - 1] = 1.0;
    let solution = system.lu().solve(&rhs).ok_or(OracleError::SingularSystem)?;

    // Exact-arithmetic solutions are non-negative; clamp rounding dust.
    let mut pi: Vec<f64> = solution.iter().map(|&x| x.max(0.0)).collect();
    let total: f64 = pi.iter().sum();
    for p in &mut pi {
        *p /= total;
    }
    Ok(pi)
}

/// Strong connectivity of the directed graph with edges on positive mass:
/// forward and backward reachability from node 0 must both be total.
fn is_strongly_connected(matrix: &[f64], n: usize) -> bool {
    let reaches_all = |transpose: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(node) = stack.pop() {
            for other in 0..n {
                let edge = if transpose {
                    matrix[other * n + node]
                } else {
                    matrix[node * n + other]
                };
                if edge > 0.0 && !seen[other] {
                    seen[other] = true;
                    count += 1;
                    stack.push(other);
                }
            }
        }
        count == n
    };
    reaches_all(false) && reaches_all(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::JointAction;
    use crate::policy::greedy_from_q;
    use crate::rng::RngStream;

    fn benchmark() -> GridConfig {
        GridConfig::default()
    }

    #[test]
    fn model_rows_are_distributions() {
        let model = build_exact_model(&benchmark()).unwrap();
        for state_index in 0..model.n_states() {
            for action_index in 0..model.n_actions() {
                let row = model.transition_row(state_index, action_index);
                let sum: f64 = row.iter().sum();
                if model.is_feasible(state_index, action_index) {
                    assert!(
                        (sum - 1.0).abs() <= 1e-12,
                        "row ({state_index}, {action_index}) sums to {sum}"
                    );
                    assert!(row.iter().all(|&p| p >= 0.0));
                } else {
                    assert_eq!(sum, 0.0);
                }
            }
        }
    }

    #[test]
    fn saturation_lumps_tail_mass_at_capacity() {
        // Solar at 5, use 3: post-usage 2, so reaching 5 needs >= 3 units;
        // P = 1 - e^-2 (1 + 2 + 2).
        let model = build_exact_model(&benchmark()).unwrap();
        let states = *model.state_space();
        let actions = *model.action_space();
        let state = JointState {
            demand_index: 0,
            solar_level: 5,
            wind_level: 5,
        };
        let action = JointAction {
            solar_power: 3,
            wind_power: 0,
            main_power: 0,
        };
        let row = model.transition_row(states.index_of(state), actions.index_of(action));
        let marginal: f64 = (0..states.len())
            .filter(|&i| states.state_at(i).solar_level == 5)
            .map(|i| row[i])
            .sum();
        let expected = 1.0 - 5.0 * (-2.0f64).exp();
        assert!(
            (marginal - expected).abs() < 1e-12,
            "marginal {marginal} vs {expected}"
        );
    }

    #[test]
    fn zero_generation_kernel_is_deterministic() {
        let config = GridConfig {
            gen_mean_solar: 0.0,
            gen_mean_wind: 0.0,
            ..benchmark()
        };
        let model = build_exact_model(&config).unwrap();
        let states = *model.state_space();
        let actions = *model.action_space();
        let state = JointState {
            demand_index: 1,
            solar_level: 4,
            wind_level: 2,
        };
        let action = JointAction {
            solar_power: 3,
            wind_power: 2,
            main_power: 5,
        };
        let row = model.transition_row(states.index_of(state), actions.index_of(action));
        for (next_index, &p) in row.iter().enumerate() {
            let next = states.state_at(next_index);
            let expected = if next.solar_level == 1 && next.wind_level == 0 {
                config.transition_row(1)[next.demand_index]
            } else {
                0.0
            };
            assert_eq!(p, expected);
        }
    }

    #[test]
    fn gamma_zero_value_iteration_is_exact_in_one_sweep() {
        let config = GridConfig {
            gamma: 0.0,
            ..benchmark()
        };
        let model = build_exact_model(&config).unwrap();
        let solution = value_iteration(&model, 1e-9);
        assert_eq!(solution.sweeps, 1);
        assert_eq!(solution.residual, 0.0);
        for state_index in 0..model.n_states() {
            let state = model.state_space().state_at(state_index);
            let best = model
                .action_space()
                .feasible_indices(state)
                .map(|a| model.reward(state_index, a))
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(solution.values.values[state_index], best);
            // Max demand 12 is coverable: supply 12 of 12 gives reward 0.
            assert!(best <= 0.0);
        }
    }

    #[test]
    fn value_iteration_meets_tolerance_and_extracts_optimal_policy() {
        let model = build_exact_model(&benchmark()).unwrap();
        let solution = value_iteration(&model, 1e-9);
        assert!(solution.residual < 1e-9, "residual {}", solution.residual);
        assert!(solution.sweeps > 10);

        // The greedy policy of Q* must be exactly the reported policy.
        let config = benchmark();
        let greedy = greedy_from_q(&solution.q_star, &config);
        assert_eq!(greedy.action_indices(), solution.policy.action_indices());

        // V*(s) = max_a Q*(s, a).
        for state_index in 0..model.n_states() {
            let state = model.state_space().state_at(state_index);
            let q_best = model
                .action_space()
                .feasible_indices(state)
                .map(|a| solution.q_star.value(state_index, a))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((q_best - solution.values.values[state_index]).abs() <= 1e-9);
        }
    }

    #[test]
    fn optimal_policy_value_matches_v_star_and_dominates_random_policies() {
        let model = build_exact_model(&benchmark()).unwrap();
        let solution = value_iteration(&model, 1e-9);
        let v_opt = exact_policy_value(&model, &solution.policy).unwrap();
        assert!(
            v_opt.sup_distance(&solution.values) < 1e-7,
            "distance {}",
            v_opt.sup_distance(&solution.values)
        );

        let config = benchmark();
        let states = StateSpace::new(&config);
        let actions = ActionSpace::new(&config);
        let mut rng = RngStream::new(31);
        for _ in 0..5 {
            let indices = (0..states.len())
                .map(|i| {
                    let state = states.state_at(i);
                    let k = rng.next_index(actions.feasible_len(state));
                    actions.index_of(actions.feasible_at(state, k))
                })
                .collect();
            let random = Policy::from_action_indices(indices, &config).unwrap();
            let v_random = exact_policy_value(&model, &random).unwrap();
            for (&vr, &vs) in v_random.values.iter().zip(&solution.values.values) {
                assert!(vr <= vs + 1e-8, "policy value {vr} exceeds optimal {vs}");
            }
        }
    }

    #[test]
    fn direct_and_iterative_policy_values_agree() {
        let model = build_exact_model(&benchmark()).unwrap();
        let solution = value_iteration(&model, 1e-9);
        let direct = exact_policy_value(&model, &solution.policy).unwrap();
        let iterative = exact_policy_value_iterative(&model, &solution.policy, 1e-10).unwrap();
        assert!(
            direct.sup_distance(&iterative) <= 1e-9,
            "routes disagree by {}",
            direct.sup_distance(&iterative)
        );
    }

    #[test]
    fn stationary_distribution_of_benchmark_demand_chain_is_uniform() {
        let config = benchmark();
        let pi = stationary_distribution(&config.demand_transition, 3).unwrap();
        for p in &pi {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stationary_distribution_two_state_examples() {
        // Asymmetric chain with known answer pi = (5/6, 1/6).
        let pi = stationary_distribution(&[0.9, 0.1, 0.5, 0.5], 2).unwrap();
        assert!((pi[0] - 5.0 / 6.0).abs() < 1e-12);
        assert!((pi[1] - 1.0 / 6.0).abs() < 1e-12);

        // Periodic but irreducible: uniform.
        let pi = stationary_distribution(&[0.0, 1.0, 1.0, 0.0], 2).unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn stationary_distribution_rejects_bad_chains() {
        assert_eq!(
            stationary_distribution(&[1.0, 0.0, 0.0, 1.0], 2),
            Err(OracleError::Reducible)
        );
        assert_eq!(
            stationary_distribution(&[1.0, 0.0, 0.0], 2),
            Err(OracleError::NotSquare { len: 3, n: 2 })
        );
        assert!(matches!(
            stationary_distribution(&[0.5, 0.4, 0.5, 0.5], 2),
            Err(OracleError::NonStochasticRow { row: 0, .. })
        ));
        assert!(matches!(
            stationary_distribution(&[-0.1, 1.1, 0.5, 0.5], 2),
            Err(OracleError::NegativeEntry { row: 0, col: 0, .. })
        ));
    }

    #[test]
    fn policy_shape_mismatch_is_rejected() {
        let model = build_exact_model(&benchmark()).unwrap();
        let small = GridConfig {
            solar_capacity: 1,
            ..benchmark()
        };
        let policy = Policy::from_action_indices(
            vec![0; StateSpace::new(&small).len()],
            &small,
        )
        .unwrap();
        assert!(matches!(
            exact_policy_value(&model, &policy),
            Err(OracleError::PolicyShapeMismatch { .. })
        ));
    }
}
