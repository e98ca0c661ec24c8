//! Replicated sweeps over `max_prod` and the cost weight, with a stable
//! CSV contract and rank statistics for trend checks.
//!
//! Each `(grid point, replication)` pair gets its own training and
//! evaluation substreams derived from the master seed, so sweeps can run
//! in parallel with results independent of scheduling and worker count.
//! Both algorithms at a grid point are evaluated under the *same*
//! evaluation substream and horizon: comparisons are between identical
//! sample paths.

use crate::config::GridConfig;
use crate::mdp::JointState;
use crate::policy::greedy_from_q;
use crate::qlearning::{
    evaluate_policy_with, EvalError, EvalMetrics, LearningSchedule, TrainError, Trainer,
    RolloutPolicy,
};
use crate::rng::RngStream;
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// Which configuration field a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    MaxProd,
    CostWeightC,
}

impl SweepVariable {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepVariable::MaxProd => "max_prod",
            SweepVariable::CostWeightC => "cost_weight_c",
        }
    }

    fn from_str(s: &str) -> Option<SweepVariable> {
        match s {
            "max_prod" => Some(SweepVariable::MaxProd),
            "cost_weight_c" => Some(SweepVariable::CostWeightC),
            _ => None,
        }
    }
}

/// Which dispatcher produced a row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Baseline,
    QLearning,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Baseline => "baseline",
            Algorithm::QLearning => "qlearning",
        }
    }

    fn from_str(s: &str) -> Option<Algorithm> {
        match s {
            "baseline" => Some(Algorithm::Baseline),
            "qlearning" => Some(Algorithm::QLearning),
            _ => None,
        }
    }
}

/// A replicated sweep: the grid, the training recipe, and the master seed.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base_config: GridConfig,
    pub variable: SweepVariable,
    pub grid: Vec<f64>,
    pub train_steps: u64,
    pub eval_steps: u64,
    pub master_seed: u64,
    pub replications: u32,
    pub schedule: LearningSchedule,
    pub epsilon: f64,
    pub initial_state: JointState,
}

impl SweepSpec {
    /// A spec with the conventional training recipe: constant step size
    /// 0.1, epsilon 0.85, 2e6 training steps, 1e4 evaluation steps, 3
    /// replications, starting from full batteries at the lowest demand.
    pub fn with_defaults(
        base_config: GridConfig,
        variable: SweepVariable,
        grid: Vec<f64>,
        master_seed: u64,
    ) -> SweepSpec {
        let initial_state = JointState::full_batteries(&base_config);
        SweepSpec {
            base_config,
            variable,
            grid,
            train_steps: 2_000_000,
            eval_steps: 10_000,
            master_seed,
            replications: 3,
            schedule: LearningSchedule::Constant { alpha0: 0.1 },
            epsilon: 0.85,
            initial_state,
        }
    }
}

/// One output row: one algorithm at one grid point in one replication.
/// Baseline rows (which involve no training) carry `train_steps == 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub variable: SweepVariable,
    pub value: f64,
    pub replication: u32,
    pub algorithm: Algorithm,
    pub metrics: EvalMetrics,
    pub train_steps: u64,
    pub eval_steps: u64,
    /// Evaluation substream id; equal across the algorithms of a point.
    pub seed: u64,
}

/// Purpose tag inside a substream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPurpose {
    Train = 0,
    Eval = 1,
}

/// Substream id for one `(grid point, replication, purpose)`. The layout
/// `(replication << 32) | (grid_index << 8) | purpose` keeps ids unique
/// across any sweep of fewer than 2^24 grid points.
pub fn substream_id(grid_index: usize, replication: u32, purpose: StreamPurpose) -> u64 {
    assert!(grid_index < (1 << 24), "grid too large for substream layout");
    ((replication as u64) << 32) | ((grid_index as u64) << 8) | purpose as u64
}

/// Failures configuring or running a sweep.
#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error("grid value {value} is invalid for {variable}: {reason}")]
    BadGridValue {
        variable: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("cost-weight sweeps need a cost-aware reward mode, got deficit_only")]
    NotCostaware,
    #[error("sweep needs at least one replication")]
    ZeroReplications,
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn sorted_grid(spec: &SweepSpec) -> Result<Vec<f64>, SweepError> {
    if spec.grid.is_empty() {
        return Err(SweepError::EmptyGrid);
    }
    if spec.replications == 0 {
        return Err(SweepError::ZeroReplications);
    }
    let variable = spec.variable.as_str();
    for &value in &spec.grid {
        if !value.is_finite() {
            return Err(SweepError::BadGridValue {
                variable,
                value,
                reason: "must be finite",
            });
        }
        match spec.variable {
            SweepVariable::MaxProd => {
                if value < 0.0 || value.fract() != 0.0 || value > u32::MAX as f64 {
                    return Err(SweepError::BadGridValue {
                        variable,
                        value,
                        reason: "must be a non-negative integer",
                    });
                }
            }
            SweepVariable::CostWeightC => {
                if !(0.0..=1.0).contains(&value) {
                    return Err(SweepError::BadGridValue {
                        variable,
                        value,
                        reason: "must be in [0, 1]",
                    });
                }
            }
        }
    }
    let mut grid = spec.grid.clone();
    grid.sort_by(|a, b| a.partial_cmp(b).expect("grid values are finite"));
    grid.dedup();
    Ok(grid)
}

/// Trains one grid point's replication and evaluates both algorithms on a
/// shared evaluation substream.
fn run_point(
    spec: &SweepSpec,
    config: &GridConfig,
    grid_index: usize,
    value: f64,
    replication: u32,
    include_baseline: bool,
) -> Result<Vec<SweepRow>, SweepError> {
    let eval_stream = substream_id(grid_index, replication, StreamPurpose::Eval);
    let row = |algorithm: Algorithm, metrics: EvalMetrics| SweepRow {
        variable: spec.variable,
        value,
        replication,
        algorithm,
        metrics,
        train_steps: match algorithm {
            Algorithm::Baseline => 0,
            Algorithm::QLearning => spec.train_steps,
        },
        eval_steps: spec.eval_steps,
        seed: eval_stream,
    };

    let mut rows = Vec::with_capacity(2);
    if include_baseline {
        let mut eval_rng = RngStream::substream(spec.master_seed, eval_stream);
        let metrics = evaluate_policy_with(
            RolloutPolicy::GreedyBaseline,
            config,
            spec.eval_steps,
            &mut eval_rng,
            spec.initial_state,
        )?;
        rows.push(row(Algorithm::Baseline, metrics));
    }

    let train_rng = RngStream::substream(
        spec.master_seed,
        substream_id(grid_index, replication, StreamPurpose::Train),
    );
    let mut trainer =
        Trainer::with_rng(config, spec.schedule, spec.epsilon, train_rng, spec.initial_state)?;
    trainer.run(spec.train_steps);
    let policy = greedy_from_q(trainer.q(), config);

    let mut eval_rng = RngStream::substream(spec.master_seed, eval_stream);
    let metrics = evaluate_policy_with(
        RolloutPolicy::Greedy(&policy),
        config,
        spec.eval_steps,
        &mut eval_rng,
        spec.initial_state,
    )?;
    rows.push(row(Algorithm::QLearning, metrics));
    Ok(rows)
}

fn run_sweep(
    spec: &SweepSpec,
    expected: SweepVariable,
    include_baseline: bool,
) -> Result<Vec<SweepRow>, SweepError> {
    assert_eq!(
        spec.variable, expected,
        "sweep runner called with the wrong variable"
    );
    spec.base_config.validate()?;
    spec.schedule.validate()?;
    let grid = sorted_grid(spec)?;

    let points: Vec<(usize, f64, u32)> = grid
        .iter()
        .enumerate()
        .flat_map(|(grid_index, &value)| {
            (0..spec.replications).map(move |replication| (grid_index, value, replication))
        })
        .collect();

    let nested: Result<Vec<Vec<SweepRow>>, SweepError> = points
        .par_iter()
        .map(|&(grid_index, value, replication)| {
            let mut config = spec.base_config.clone();
            match spec.variable {
                SweepVariable::MaxProd => config.max_prod = value as u32,
                SweepVariable::CostWeightC => config.cost_weight_c = value,
            }
            run_point(spec, &config, grid_index, value, replication, include_baseline)
        })
        .collect();
    Ok(nested?.into_iter().flatten().collect())
}

/// Sweeps `max_prod`, comparing the myopic baseline and joint Q-learning
/// per point under shared evaluation streams. Rows come out ordered by
/// `(value, replication, algorithm)`.
pub fn run_fig1_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>, SweepError> {
    run_sweep(spec, SweepVariable::MaxProd, true)
}

/// Sweeps the cost weight under a cost-aware reward, training per point.
/// Only learned-policy rows are emitted: the baseline never consults the
/// reward, so its dispatch would not vary with `c`.
pub fn run_fig2_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>, SweepError> {
    if !spec.base_config.reward_mode.is_costaware() {
        return Err(SweepError::NotCostaware);
    }
    run_sweep(spec, SweepVariable::CostWeightC, false)
}

/// The CSV schema, stable across releases.
pub const CSV_HEADER: &str = "sweep_var,value,replication,algorithm,avg_signed_deficit,\
avg_squared_deficit,avg_main_power,train_steps,eval_steps,seed";

/// Formats with six significant digits, the precision of the CSV contract.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let exponent = x.abs().log10().floor() as i32;
    let decimals = (5 - exponent).clamp(0, 17) as usize;
    format!("{x:.decimals$}")
}

/// Writes rows in the stable schema.
pub fn emit_csv<W: Write>(rows: &[SweepRow], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            row.variable.as_str(),
            format_sig6(row.value),
            row.replication,
            row.algorithm.as_str(),
            format_sig6(row.metrics.avg_signed_deficit),
            format_sig6(row.metrics.avg_squared_deficit),
            format_sig6(row.metrics.avg_main_power),
            row.train_steps,
            row.eval_steps,
            row.seed,
        )?;
    }
    Ok(())
}

pub fn rows_to_csv_string(rows: &[SweepRow]) -> String {
    let mut bytes = Vec::new();
    emit_csv(rows, &mut bytes).expect("writing to memory cannot fail");
    String::from_utf8(bytes).expect("csv output is ascii")
}

pub fn write_csv_file(rows: &[SweepRow], path: &Path) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    emit_csv(rows, &mut out)?;
    out.flush()
}

/// Failures parsing a sweep CSV.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CsvError {
    #[error("bad csv header: {header:?}")]
    BadHeader { header: String },
    #[error("csv row {row}: {reason}")]
    BadRow { row: usize, reason: String },
}

/// Parses a file produced by [`emit_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<SweepRow>, CsvError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == CSV_HEADER => {}
        other => {
            return Err(CsvError::BadHeader {
                header: other.unwrap_or_default().to_string(),
            })
        }
    }
    let mut rows = Vec::new();
    for (index, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let row = index + 2;
        let bad = |reason: &str| CsvError::BadRow {
            row,
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(bad(&format!("expected 10 fields, got {}", fields.len())));
        }
        let variable =
            SweepVariable::from_str(fields[0]).ok_or_else(|| bad("unknown sweep_var"))?;
        let algorithm =
            Algorithm::from_str(fields[3]).ok_or_else(|| bad("unknown algorithm"))?;
        let float = |field: &str, name: &str| -> Result<f64, CsvError> {
            field
                .parse()
                .map_err(|_| bad(&format!("unparseable {name}")))
        };
        let integer = |field: &str, name: &str| -> Result<u64, CsvError> {
            field
                .parse()
                .map_err(|_| bad(&format!("unparseable {name}")))
        };
        let eval_steps = integer(fields[8], "eval_steps")?;
        rows.push(SweepRow {
            variable,
            value: float(fields[1], "value")?,
            replication: integer(fields[2], "replication")? as u32,
            algorithm,
            metrics: EvalMetrics {
                avg_signed_deficit: float(fields[4], "avg_signed_deficit")?,
                avg_squared_deficit: float(fields[5], "avg_squared_deficit")?,
                avg_main_power: float(fields[6], "avg_main_power")?,
                steps: eval_steps,
            },
            train_steps: integer(fields[7], "train_steps")?,
            eval_steps,
            seed: integer(fields[9], "seed")?,
        });
    }
    Ok(rows)
}

/// Spearman rank correlation with average ranks on ties. Returns 0 when
/// either input has zero rank variance (the correlation is undefined and
/// trend assertions should fail loudly rather than pass vacuously).
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "rank inputs must pair up");
    assert!(xs.len() >= 2, "need at least two observations");
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = rx.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (x, y) in rx.iter().zip(&ry) {
        cov += (x - mean) * (y - mean);
        var_x += (x - mean) * (x - mean);
        var_y += (y - mean) * (y - mean);
    }
    if var_x == 0.0 || var_y == 0.0 {
        return 0.0;
    }
    cov / (var_x * var_y).sqrt()
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[a]
            .partial_cmp(&values[b])
            .expect("rank inputs must not contain NaN")
    });
    let mut result = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        // Average 1-based rank over the tied run [start, end].
        let rank = (start + end) as f64 / 2.0 + 1.0;
        for &index in &order[start..=end] {
            result[index] = rank;
        }
        start = end + 1;
    }
    result
}
