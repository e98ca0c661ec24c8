//! Command-line front end. Exit codes: 0 success, 1 configuration or
//! usage errors, 2 runtime failures.

use clap::{Parser, Subcommand};
use microgrid::config::{ConfigFileError, GridConfig, RewardMode};
use microgrid::mdp::{ActionSpace, JointState, StateSpace};
use microgrid::oracle::{build_exact_model, exact_policy_value, value_iteration};
use microgrid::policy::{greedy_from_q, QTable};
use microgrid::qlearning::{evaluate_policy, train, EvalMetrics, LearningSchedule, RolloutPolicy};
use microgrid::sweep::{
    run_fig1_sweep, run_fig2_sweep, write_csv_file, SweepSpec, SweepVariable,
};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "microgrid",
    version,
    about = "Discrete microgrid dispatch: simulate, learn, certify"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a configuration file, reporting every violation
    Validate {
        /// Path to a TOML configuration
        config: PathBuf,
    },
    /// Roll out the myopic baseline dispatcher and print metrics
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        eval_steps: u64,
    },
    /// Train joint Q-learning and save the Q-table as CSV
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2_000_000)]
        train_steps: u64,
        /// Exploration probability in [0, 1]
        #[arg(long, default_value_t = 0.85)]
        epsilon: f64,
        /// Step size (alpha0 of the schedule)
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        /// "constant" or "polynomial:<exponent>" (per-pair decay)
        #[arg(long, default_value = "constant")]
        schedule: String,
        /// Override the config's reward mode
        #[arg(long)]
        reward_mode: Option<String>,
        /// Where to write the learned Q-table
        #[arg(long)]
        out: PathBuf,
        /// Optional training-log CSV
        #[arg(long)]
        train_log: Option<PathBuf>,
    },
    /// Evaluate a saved Q-table's greedy policy and print metrics
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        qtable: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        eval_steps: u64,
    },
    /// Sweep max_prod, comparing baseline and Q-learning per grid point
    SweepMpa {
        #[arg(long)]
        config: PathBuf,
        /// Master seed; per-point substreams derive from it
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2_000_000)]
        train_steps: u64,
        #[arg(long, default_value_t = 10_000)]
        eval_steps: u64,
        #[arg(long, default_value_t = 0.85)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value = "constant")]
        schedule: String,
        #[arg(long, default_value_t = 3)]
        replications: u32,
        /// Comma-separated max_prod values
        #[arg(long, default_value = "0,1,2,3,4,5,6,7,8")]
        grid: String,
        /// Where to write the sweep CSV
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep the cost weight c under a cost-aware reward
    SweepC {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2_000_000)]
        train_steps: u64,
        #[arg(long, default_value_t = 10_000)]
        eval_steps: u64,
        #[arg(long, default_value_t = 0.85)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value = "constant")]
        schedule: String,
        #[arg(long, default_value_t = 3)]
        replications: u32,
        /// Comma-separated cost weights in [0, 1]
        #[arg(long, default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")]
        grid: String,
        /// Reward mode for the sweep (a deficit-only config defaults to
        /// costaware_penalize_main)
        #[arg(long)]
        reward_mode: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the exact model and print certification numbers
    Oracle {
        #[arg(long)]
        config: PathBuf,
        /// Value-iteration tolerance
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Compare a saved Q-table's greedy policy against the oracle
        #[arg(long)]
        qtable: Option<PathBuf>,
        /// Optional CSV dump of V* and the optimal action per state
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum CliError {
    Config(String),
    Runtime(String),
}

impl From<ConfigFileError> for CliError {
    fn from(err: ConfigFileError) -> CliError {
        CliError::Config(err.to_string())
    }
}

fn config_err(err: impl std::fmt::Display) -> CliError {
    CliError::Config(err.to_string())
}

fn runtime_err(err: impl std::fmt::Display) -> CliError {
    CliError::Runtime(err.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

fn parse_reward_mode(name: &str) -> Result<RewardMode, CliError> {
    match name {
        "deficit_only" => Ok(RewardMode::DeficitOnly),
        "costaware_credit_main" => Ok(RewardMode::CostawareCreditMain),
        "costaware_penalize_main" => Ok(RewardMode::CostawarePenalizeMain),
        other => Err(CliError::Config(format!(
            "unknown reward mode {other:?}; expected deficit_only, \
             costaware_credit_main, or costaware_penalize_main"
        ))),
    }
}

fn parse_schedule(spec: &str, alpha: f64) -> Result<LearningSchedule, CliError> {
    let schedule = if spec == "constant" {
        LearningSchedule::Constant { alpha0: alpha }
    } else if let Some(exponent) = spec.strip_prefix("polynomial:") {
        let exponent: f64 = exponent.parse().map_err(|_| {
            CliError::Config(format!("unparseable decay exponent in schedule {spec:?}"))
        })?;
        LearningSchedule::PolynomialDecay {
            alpha0: alpha,
            exponent,
        }
    } else {
        return Err(CliError::Config(format!(
            "unknown schedule {spec:?}; expected \"constant\" or \"polynomial:<exponent>\""
        )));
    };
    schedule.validate().map_err(config_err)?;
    Ok(schedule)
}

fn parse_grid(grid: &str) -> Result<Vec<f64>, CliError> {
    grid.split(',')
        .map(|field| {
            field
                .trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("unparseable grid value {field:?}")))
        })
        .collect()
}

fn print_metrics(metrics: &EvalMetrics) {
    println!("avg_signed_deficit={}", metrics.avg_signed_deficit);
    println!("avg_squared_deficit={}", metrics.avg_squared_deficit);
    println!("avg_main_power={}", metrics.avg_main_power);
    println!("steps={}", metrics.steps);
}

#[allow(clippy::too_many_arguments)]
fn sweep_spec(
    base_config: GridConfig,
    variable: SweepVariable,
    grid: &str,
    seed: u64,
    train_steps: u64,
    eval_steps: u64,
    epsilon: f64,
    alpha: f64,
    schedule: &str,
    replications: u32,
) -> Result<SweepSpec, CliError> {
    let schedule = parse_schedule(schedule, alpha)?;
    let grid = parse_grid(grid)?;
    Ok(SweepSpec {
        train_steps,
        eval_steps,
        replications,
        schedule,
        epsilon,
        ..SweepSpec::with_defaults(base_config, variable, grid, seed)
    })
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Validate { config } => {
            let config = GridConfig::load(&config)?;
            println!(
                "ok: {} demand levels, {} states, {} actions",
                config.n_demand_levels(),
                StateSpace::new(&config).len(),
                ActionSpace::new(&config).max_len()
            );
            Ok(())
        }

        Command::Baseline {
            config,
            seed,
            eval_steps,
        } => {
            let config = GridConfig::load(&config)?;
            let metrics = evaluate_policy(
                RolloutPolicy::GreedyBaseline,
                &config,
                eval_steps,
                seed,
                JointState::full_batteries(&config),
            )
            .map_err(config_err)?;
            print_metrics(&metrics);
            Ok(())
        }

        Command::Train {
            config,
            seed,
            train_steps,
            epsilon,
            alpha,
            schedule,
            reward_mode,
            out,
            train_log,
        } => {
            let mut config = GridConfig::load(&config)?;
            if let Some(mode) = reward_mode {
                config.reward_mode = parse_reward_mode(&mode)?;
            }
            let schedule = parse_schedule(&schedule, alpha)?;
            let (q, log) = train(
                &config,
                schedule,
                epsilon,
                train_steps,
                seed,
                JointState::full_batteries(&config),
            )
            .map_err(config_err)?;
            q.save(&out).map_err(runtime_err)?;
            if let Some(log_path) = train_log {
                write_train_log(&log, &log_path).map_err(runtime_err)?;
            }
            if let Some(last) = log.rows().last() {
                println!("running_avg_deficit={}", last.running_avg_deficit);
            }
            println!("train_steps={train_steps}");
            println!("qtable={}", out.display());
            Ok(())
        }

        Command::Eval {
            config,
            qtable,
            seed,
            eval_steps,
        } => {
            let config = GridConfig::load(&config)?;
            let q = QTable::load(&qtable, &config).map_err(runtime_err)?;
            let policy = greedy_from_q(&q, &config);
            let metrics = evaluate_policy(
                RolloutPolicy::Greedy(&policy),
                &config,
                eval_steps,
                seed,
                JointState::full_batteries(&config),
            )
            .map_err(config_err)?;
            print_metrics(&metrics);
            Ok(())
        }

        Command::SweepMpa {
            config,
            seed,
            train_steps,
            eval_steps,
            epsilon,
            alpha,
            schedule,
            replications,
            grid,
            out,
        } => {
            let config = GridConfig::load(&config)?;
            let spec = sweep_spec(
                config,
                SweepVariable::MaxProd,
                &grid,
                seed,
                train_steps,
                eval_steps,
                epsilon,
                alpha,
                &schedule,
                replications,
            )?;
            let rows = run_fig1_sweep(&spec).map_err(config_err)?;
            write_csv_file(&rows, &out).map_err(runtime_err)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
            Ok(())
        }

        Command::SweepC {
            config,
            seed,
            train_steps,
            eval_steps,
            epsilon,
            alpha,
            schedule,
            replications,
            grid,
            reward_mode,
            out,
        } => {
            let mut config = GridConfig::load(&config)?;
            match reward_mode {
                Some(mode) => config.reward_mode = parse_reward_mode(&mode)?,
                None => {
                    if !config.reward_mode.is_costaware() {
                        eprintln!(
                            "note: config is deficit_only; sweeping c under \
                             costaware_penalize_main"
                        );
                        config.reward_mode = RewardMode::CostawarePenalizeMain;
                    }
                }
            }
            let spec = sweep_spec(
                config,
                SweepVariable::CostWeightC,
                &grid,
                seed,
                train_steps,
                eval_steps,
                epsilon,
                alpha,
                &schedule,
                replications,
            )?;
            let rows = run_fig2_sweep(&spec).map_err(config_err)?;
            write_csv_file(&rows, &out).map_err(runtime_err)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
            Ok(())
        }

        Command::Oracle {
            config,
            tol,
            qtable,
            out,
        } => {
            if !(tol > 0.0) {
                return Err(CliError::Config(format!(
                    "tolerance must be positive, got {tol}"
                )));
            }
            let config = GridConfig::load(&config)?;
            let model = build_exact_model(&config).map_err(config_err)?;
            let solution = value_iteration(&model, tol);
            println!("states={}", model.n_states());
            println!("actions={}", model.n_actions());
            println!("sweeps={}", solution.sweeps);
            println!("bellman_residual={}", solution.residual);
            println!("v_star_sup_norm={}", solution.values.sup_norm());

            if let Some(qtable_path) = qtable {
                let q = QTable::load(&qtable_path, &config).map_err(runtime_err)?;
                let learned = greedy_from_q(&q, &config);
                let total = learned.len();
                let matches = learned
                    .action_indices()
                    .iter()
                    .zip(solution.policy.action_indices())
                    .filter(|(a, b)| a == b)
                    .count();
                println!("policy_agreement={}", matches as f64 / total as f64);
                let value = exact_policy_value(&model, &learned).map_err(runtime_err)?;
                println!(
                    "policy_value_gap={}",
                    value.sup_distance(&solution.values)
                );
            }

            if let Some(out_path) = out {
                write_oracle_csv(&solution, &out_path).map_err(runtime_err)?;
                println!("oracle={}", out_path.display());
            }
            Ok(())
        }
    }
}

fn write_train_log(
    log: &microgrid::qlearning::TrainLog,
    path: &Path,
) -> Result<(), std::io::Error> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    log.write_csv(&mut out)
}

fn write_oracle_csv(
    solution: &microgrid::oracle::ViSolution,
    path: &Path,
) -> Result<(), std::io::Error> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "state_index,v_star,action_index")?;
    for (state_index, value) in solution.values.values.iter().enumerate() {
        writeln!(
            out,
            "{state_index},{value},{}",
            solution.policy.action_index(state_index)
        )?;
    }
    out.flush()
}
