//! Discrete-state microgrid dispatch: a demand/battery simulator, joint
//! tabular Q-learning for the two renewable sources, and an exact
//! value-iteration oracle for certifying learned policies.
//!
//! The moving parts:
//!
//! * [`config`]: the [`GridConfig`] instance description and validation;
//! * [`mdp`]: joint states, actions, index layouts, battery dynamics,
//!   rewards, and per-agent views;
//! * [`rng`]: seeded ChaCha8 streams with documented substream derivation;
//! * [`env`]: sampled environment steps;
//! * [`policy`]: Q-tables, the myopic baseline rule, epsilon-greedy
//!   selection, greedy policy extraction, and Q-table files;
//! * [`qlearning`]: the training loop and evaluation rollouts;
//! * [`oracle`]: the closed-form transition model, value iteration, exact
//!   policy values, and stationary distributions;
//! * [`sweep`]: replicated parallel sweeps with a stable CSV contract.

pub mod config;
pub mod env;
pub mod mdp;
pub mod oracle;
pub mod policy;
pub mod qlearning;
pub mod rng;
pub mod sweep;

pub use config::{GridConfig, RewardMode};
pub use mdp::{JointAction, JointState, Policy};
pub use policy::QTable;
pub use qlearning::{EvalMetrics, LearningSchedule};
pub use rng::RngStream;
