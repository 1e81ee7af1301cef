//! Turn-structured market environment: leaders post prices, followers see
//! them and buy bandwidth, every agent is rewarded with its utility.

mod buffer;
mod market;
mod observation;

pub use buffer::{play_round, rollout, Agent, Decision, Round, TrajectoryBuffer, TRAJECTORY_CSV_HEADER};
pub use market::{reward_from_utility, MarketEnv, StepOutcome};
pub use observation::{AgentId, Observation};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::GameError;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("invalid env config: {0}")]
    Config(String),
    #[error("{what}: expected length {expected}, got {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite action from {agent} at step {t}")]
    NonFinite { agent: AgentId, t: usize },
    #[error("step called out of turn: {0}")]
    Turn(&'static str),
    #[error("agent {agent} failed: {reason}")]
    Agent { agent: AgentId, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Rounds of history kept in each observation (L).
    pub history_window: usize,
    /// Steps per episode (T).
    pub episode_length: usize,
    pub rng_seed: u64,
    pub reward_scale: f64,
    /// Redraw task importances and deadlines at every reset.
    pub resample_tasks: bool,
    pub resample_importance: (f64, f64),
    pub resample_deadline: (f64, f64),
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            history_window: 4,
            episode_length: 50,
            rng_seed: 0,
            reward_scale: 0.1,
            resample_tasks: false,
            resample_importance: (1.0, 3.0),
            resample_deadline: (0.5, 2.0),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.history_window == 0 {
            return Err(EnvError::Config("history_window must be >= 1".into()));
        }
        if self.episode_length == 0 {
            return Err(EnvError::Config("episode_length must be >= 1".into()));
        }
        if !(self.reward_scale.is_finite() && self.reward_scale > 0.0) {
            return Err(EnvError::Config("reward_scale must be positive".into()));
        }
        let ranges = [self.resample_importance, self.resample_deadline];
        if ranges.iter().any(|(lo, hi)| !(*lo > 0.0 && lo <= hi && hi.is_finite())) {
            return Err(EnvError::Config("resample ranges need 0 < lo <= hi".into()));
        }
        Ok(())
    }
}
