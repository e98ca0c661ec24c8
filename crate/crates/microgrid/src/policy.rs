//! Q-tables and action selection: the greedy baseline rule, epsilon-greedy
//! exploration, and greedy policy extraction.
//!
//! Argmax scans feasible actions in ascending global index and keeps the
//! first maximum, so ties always resolve to the lowest action index. Entries
//! for actions infeasible in a state are never read as argmax candidates.

use crate::config::GridConfig;
use crate::mdp::{ActionSpace, JointAction, JointState, Policy, StateSpace};
use crate::rng::RngStream;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Dense table over `(state index, global action index)` with per-pair
/// visit counts. Values start at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
    visit_counts: Vec<u64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> QTable {
        QTable {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
            visit_counts: vec![0; n_states * n_actions],
        }
    }

    /// A zero table shaped for `config`: one row per state, one column per
    /// action in the full cuboid.
    pub fn for_config(config: &GridConfig) -> QTable {
        QTable::zeros(
            StateSpace::new(config).len(),
            ActionSpace::new(config).max_len(),
        )
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    fn offset(&self, state_index: usize, action_index: usize) -> usize {
        assert!(state_index < self.n_states, "state index out of range");
        assert!(action_index < self.n_actions, "action index out of range");
        state_index * self.n_actions + action_index
    }

    #[inline]
    pub fn value(&self, state_index: usize, action_index: usize) -> f64 {
        self.values[self.offset(state_index, action_index)]
    }

    pub fn set_value(&mut self, state_index: usize, action_index: usize, value: f64) {
        let offset = self.offset(state_index, action_index);
        self.values[offset] = value;
    }

    #[inline]
    pub fn visits(&self, state_index: usize, action_index: usize) -> u64 {
        self.visit_counts[self.offset(state_index, action_index)]
    }

    pub(crate) fn record_visit(&mut self, state_index: usize, action_index: usize) -> u64 {
        let offset = self.offset(state_index, action_index);
        self.visit_counts[offset] += 1;
        self.visit_counts[offset]
    }

    /// Total visits across all actions of one state.
    pub fn state_visits(&self, state_index: usize) -> u64 {
        let base = state_index * self.n_actions;
        self.visit_counts[base..base + self.n_actions].iter().sum()
    }

    /// Greatest Q-value among the actions feasible in `state`. The feasible
    /// main-power block of each `(solar, wind)` pair is contiguous in the
    /// row, so the scan runs over slices.
    pub fn max_feasible(
        &self,
        state: JointState,
        states: &StateSpace,
        actions: &ActionSpace,
    ) -> f64 {
        let base = states.index_of(state) * self.n_actions;
        let main_stride = actions.max_prod() as usize + 1;
        let wind_stride = actions.wind_capacity() as usize + 1;
        let mut best = f64::NEG_INFINITY;
        for sp in 0..=state.solar_level as usize {
            for wp in 0..=state.wind_level as usize {
                let row = base + (sp * wind_stride + wp) * main_stride;
                for &value in &self.values[row..row + main_stride] {
                    if value > best {
                        best = value;
                    }
                }
            }
        }
        best
    }

    /// Lowest-index feasible argmax in `state`.
    pub fn argmax_feasible(
        &self,
        state: JointState,
        states: &StateSpace,
        actions: &ActionSpace,
    ) -> usize {
        let base = states.index_of(state) * self.n_actions;
        let main_stride = actions.max_prod() as usize + 1;
        let wind_stride = actions.wind_capacity() as usize + 1;
        let mut best = f64::NEG_INFINITY;
        let mut best_index = 0;
        let mut first = true;
        for sp in 0..=state.solar_level as usize {
            for wp in 0..=state.wind_level as usize {
                let row = (sp * wind_stride + wp) * main_stride;
                for (main, &value) in self.values[base + row..base + row + main_stride]
                    .iter()
                    .enumerate()
                {
                    if first || value > best {
                        best = value;
                        best_index = row + main;
                        first = false;
                    }
                }
            }
        }
        best_index
    }

    /// Writes the full table as CSV: `state_index,action_index,value`.
    /// Values use shortest round-trip formatting, so loading is bit-exact.
    pub fn save(&self, path: &Path) -> Result<(), QTableFileError> {
        let mut out = std::io::BufWriter::new(create(path)?);
        (|| -> std::io::Result<()> {
            writeln!(out, "state_index,action_index,value")?;
            for state_index in 0..self.n_states {
                for action_index in 0..self.n_actions {
                    writeln!(
                        out,
                        "{state_index},{action_index},{}",
                        self.value(state_index, action_index)
                    )?;
                }
            }
            out.flush()
        })()
        .map_err(|source| QTableFileError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Loads a table saved by [`QTable::save`] and checks it covers exactly
    /// the `(state, action)` grid of `config`. Visit counts are not stored
    /// in the file and load as zero.
    pub fn load(path: &Path, config: &GridConfig) -> Result<QTable, QTableFileError> {
        let io_err = |source| QTableFileError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = std::fs::File::open(path).map_err(io_err)?;
        let mut lines = BufReader::new(file).lines();
        match lines.next() {
            Some(Ok(header)) if header == "state_index,action_index,value" => {}
            Some(Ok(header)) => return Err(QTableFileError::BadHeader { header }),
            Some(Err(source)) => return Err(io_err(source)),
            None => {
                return Err(QTableFileError::BadHeader {
                    header: String::new(),
                })
            }
        }

        let mut table = QTable::for_config(config);
        let mut filled = vec![false; table.values.len()];
        for (line_number, line) in lines.enumerate() {
            let line = line.map_err(io_err)?;
            if line.is_empty() {
                continue;
            }
            let row = line_number + 2;
            let mut fields = line.split(',');
            let mut field = |name: &'static str| {
                fields.next().ok_or(QTableFileError::BadRow {
                    row,
                    reason: name,
                })
            };
            let state_index: usize = parse(field("missing state_index")?, row)?;
            let action_index: usize = parse(field("missing action_index")?, row)?;
            let value: f64 = parse(field("missing value")?, row)?;
            if state_index >= table.n_states || action_index >= table.n_actions {
                return Err(QTableFileError::IndexOutOfRange {
                    row,
                    state_index,
                    action_index,
                });
            }
            let offset = state_index * table.n_actions + action_index;
            if filled[offset] {
                return Err(QTableFileError::DuplicateEntry {
                    state_index,
                    action_index,
                });
            }
            filled[offset] = true;
            table.values[offset] = value;
        }
        if let Some(missing) = filled.iter().position(|&f| !f) {
            return Err(QTableFileError::MissingEntry {
                state_index: missing / table.n_actions,
                action_index: missing % table.n_actions,
            });
        }
        Ok(table)
    }
}

fn create(path: &Path) -> Result<std::fs::File, QTableFileError> {
    std::fs::File::create(path).map_err(|source| QTableFileError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse<T: std::str::FromStr>(field: &str, row: usize) -> Result<T, QTableFileError> {
    field.parse().map_err(|_| QTableFileError::BadRow {
        row,
        reason: "unparseable field",
    })
}

/// Failures reading or writing Q-table files.
#[derive(Debug, Error)]
pub enum QTableFileError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad q-table header: {header:?}")]
    BadHeader { header: String },
    #[error("bad q-table row {row}: {reason}")]
    BadRow { row: usize, reason: &'static str },
    #[error("q-table row {row} indexes ({state_index}, {action_index}) outside the config's table")]
    IndexOutOfRange {
        row: usize,
        state_index: usize,
        action_index: usize,
    },
    #[error("duplicate q-table entry for ({state_index}, {action_index})")]
    DuplicateEntry {
        state_index: usize,
        action_index: usize,
    },
    #[error("q-table file lacks an entry for ({state_index}, {action_index})")]
    MissingEntry {
        state_index: usize,
        action_index: usize,
    },
}

/// The myopic dispatch rule: use all generated power now and top up from
/// the main grid just enough to meet demand, capped at `max_prod`.
pub fn greedy_baseline_action(
    demand: u32,
    solar_generated: u32,
    wind_generated: u32,
    max_prod: u32,
) -> JointAction {
    let renewable = solar_generated + wind_generated;
    let main_power = demand.saturating_sub(renewable).min(max_prod);
    JointAction {
        solar_power: solar_generated,
        wind_power: wind_generated,
        main_power,
    }
}

/// Epsilon-greedy selection over the feasible actions of `state`: with
/// probability `epsilon` a uniform feasible action, otherwise the greedy
/// one. Always consumes exactly one uniform draw plus one more on the
/// exploration branch.
pub fn epsilon_greedy(
    q: &QTable,
    state: JointState,
    epsilon: f64,
    config: &GridConfig,
    rng: &mut RngStream,
) -> JointAction {
    assert!(
        (0.0..=1.0).contains(&epsilon),
        "epsilon must be in [0, 1], got {epsilon}"
    );
    let states = StateSpace::new(config);
    let actions = ActionSpace::new(config);
    let explore = rng.next_f64() < epsilon;
    if explore {
        let k = rng.next_index(actions.feasible_len(state));
        actions.feasible_at(state, k)
    } else {
        actions.action_at(q.argmax_feasible(state, &states, &actions))
    }
}

/// Extracts the greedy policy of `q`: per state the lowest-index feasible
/// argmax.
pub fn greedy_from_q(q: &QTable, config: &GridConfig) -> Policy {
    let states = StateSpace::new(config);
    let actions = ActionSpace::new(config);
    let indices = (0..states.len())
        .map(|i| q.argmax_feasible(states.state_at(i), &states, &actions))
        .collect();
    Policy::from_action_indices(indices, config).expect("argmax over feasible actions is feasible")
}
