//! Problem configuration: one [`GridConfig`] describes a complete microgrid
//! instance (demand chain, battery capacities, generation means, reward).

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// How the single-stage reward is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// `-(demand - supply)^2`, ignoring `cost_weight_c`.
    DeficitOnly,
    /// `-c*(demand - supply)^2 + (1-c)*main^2`: main-grid draw is credited.
    CostawareCreditMain,
    /// `-c*(demand - supply)^2 - (1-c)*main^2`: main-grid draw is penalized.
    CostawarePenalizeMain,
}

impl RewardMode {
    pub fn is_costaware(self) -> bool {
        matches!(
            self,
            RewardMode::CostawareCreditMain | RewardMode::CostawarePenalizeMain
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RewardMode::DeficitOnly => "deficit_only",
            RewardMode::CostawareCreditMain => "costaware_credit_main",
            RewardMode::CostawarePenalizeMain => "costaware_penalize_main",
        }
    }
}

/// A complete microgrid instance. All power quantities are integer units.
///
/// `demand_transition` is a row-major `n x n` matrix over `demand_levels`;
/// row `i` is the distribution of the next demand level given level `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub demand_levels: Vec<u32>,
    pub demand_transition: Vec<f64>,
    pub solar_capacity: u32,
    pub wind_capacity: u32,
    pub max_prod: u32,
    pub gen_mean_solar: f64,
    pub gen_mean_wind: f64,
    pub gamma: f64,
    pub cost_weight_c: f64,
    pub reward_mode: RewardMode,
}

/// The three-level benchmark instance used throughout the tests and README.
impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            demand_levels: vec![8, 10, 12],
            demand_transition: vec![
                0.1, 0.6, 0.3, //
                0.3, 0.1, 0.6, //
                0.6, 0.3, 0.1, //
            ],
            solar_capacity: 5,
            wind_capacity: 5,
            max_prod: 8,
            gen_mean_solar: 2.0,
            gen_mean_wind: 2.0,
            gamma: 0.9,
            cost_weight_c: 1.0,
            reward_mode: RewardMode::DeficitOnly,
        }
    }
}

impl GridConfig {
    pub fn n_demand_levels(&self) -> usize {
        self.demand_levels.len()
    }

    /// Demand in power units at a given demand index. Panics if out of range.
    pub fn demand(&self, demand_index: usize) -> u32 {
        self.demand_levels[demand_index]
    }

    /// Row of the demand transition matrix. Panics if out of range.
    pub fn transition_row(&self, demand_index: usize) -> &[f64] {
        let n = self.n_demand_levels();
        &self.demand_transition[demand_index * n..(demand_index + 1) * n]
    }

    /// Checks every structural constraint, reporting all violations at once.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut violations = Vec::new();
        let n = self.demand_levels.len();

        if n == 0 {
            violations.push(ConfigViolation::EmptyDemandLevels);
        }
        for (i, w) in self.demand_levels.windows(2).enumerate() {
            if w[0] >= w[1] {
                violations.push(ConfigViolation::DemandLevelsNotIncreasing {
                    index: i,
                    value: w[0],
                    next: w[1],
                });
            }
        }

        if self.demand_transition.len() != n * n {
            violations.push(ConfigViolation::TransitionWrongSize {
                expected: n * n,
                got: self.demand_transition.len(),
            });
        } else {
            for row in 0..n {
                let mut sum = 0.0;
                for col in 0..n {
                    let value = self.demand_transition[row * n + col];
                    if !(value >= 0.0) || !value.is_finite() {
                        violations.push(ConfigViolation::TransitionBadEntry { row, col, value });
                    }
                    sum += value;
                }
                if !((sum - 1.0).abs() <= 1e-12) {
                    violations.push(ConfigViolation::TransitionRowSum { row, sum });
                }
            }
        }

        if !(self.gamma >= 0.0) {
            violations.push(ConfigViolation::GammaNegative { gamma: self.gamma });
        }
        if !(self.gamma < 1.0) {
            violations.push(ConfigViolation::GammaNotBelowOne { gamma: self.gamma });
        }
        if !(0.0..=1.0).contains(&self.cost_weight_c) {
            violations.push(ConfigViolation::CostWeightOutOfRange {
                c: self.cost_weight_c,
            });
        }
        for (name, value) in [
            ("gen_mean_solar", self.gen_mean_solar),
            ("gen_mean_wind", self.gen_mean_wind),
        ] {
            if !value.is_finite() || value < 0.0 {
                violations.push(ConfigViolation::GenMeanInvalid { name, value });
            }
        }

        if violations.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { violations })
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigFileError> {
        let config: GridConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigFileError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigFileError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }
}

/// Validates and returns the configuration unchanged, or every violation.
pub fn validate_config(config: GridConfig) -> Result<GridConfig, ConfigError> {
    config.validate()?;
    Ok(config)
}

/// A single structural violation found by [`GridConfig::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum ConfigViolation {
    EmptyDemandLevels,
    DemandLevelsNotIncreasing { index: usize, value: u32, next: u32 },
    TransitionWrongSize { expected: usize, got: usize },
    TransitionBadEntry { row: usize, col: usize, value: f64 },
    TransitionRowSum { row: usize, sum: f64 },
    GammaNegative { gamma: f64 },
    GammaNotBelowOne { gamma: f64 },
    CostWeightOutOfRange { c: f64 },
    GenMeanInvalid { name: &'static str, value: f64 },
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigViolation::EmptyDemandLevels => {
                write!(f, "demand_levels must be non-empty")
            }
            ConfigViolation::DemandLevelsNotIncreasing { index, value, next } => write!(
                f,
                "demand_levels must be strictly increasing: levels[{index}] = {value} >= levels[{}] = {next}",
                index + 1
            ),
            ConfigViolation::TransitionWrongSize { expected, got } => write!(
                f,
                "demand_transition must have n^2 = {expected} entries, got {got}"
            ),
            ConfigViolation::TransitionBadEntry { row, col, value } => write!(
                f,
                "demand_transition[{row}][{col}] must be a finite value >= 0, got {value}"
            ),
            ConfigViolation::TransitionRowSum { row, sum } => {
                write!(f, "demand_transition row {row} sums to {sum}, expected 1")
            }
            ConfigViolation::GammaNegative { gamma } => {
                write!(f, "gamma must be >= 0, got {gamma}")
            }
            ConfigViolation::GammaNotBelowOne { gamma } => {
                write!(f, "gamma must be < 1, got {gamma}")
            }
            ConfigViolation::CostWeightOutOfRange { c } => {
                write!(f, "cost_weight_c must be in [0, 1], got {c}")
            }
            ConfigViolation::GenMeanInvalid { name, value } => {
                write!(f, "{name} must be a finite value >= 0, got {value}")
            }
        }
    }
}

/// One or more configuration violations, each individually reported.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub violations: Vec<ConfigViolation>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration:")?;
        for v in &self.violations {
            write!(f, "\n  - {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

/// Failure to obtain a valid configuration from a file.
#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Invalid(#[from] ConfigError),
}
