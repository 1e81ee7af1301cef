//! Multi-agent PPO: one actor and one critic per RSU and per AV, trained
//! independently on their own rewards. Recurrent (Bi-LSTM) and feed-forward
//! actors share the trainer; random and analytic-equilibrium policies serve
//! as baselines.

mod agents;
mod ppo;
mod train;

pub use agents::{build_agents, obs_scale, OracleAgent, PolicyAgent, PpoAgent, RandomAgent};
pub use ppo::{
    clipped_surrogate, compute_td_and_advantage, critic_loss, normalize, ppo_actor_loss, ActorLoss,
    PpoSample,
};
pub use train::{evaluate, train, EvalReport, TrainReport, UpdateStats};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvError;
use crate::game::GameError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum MarlError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{what}: expected length {expected}, got {found}")]
    Length {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("training diverged: {agent} {which} loss {value:e} at episode {episode}")]
    Diverged {
        agent: String,
        which: &'static str,
        value: f64,
        episode: usize,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Bi-LSTM actors.
    Mablppo,
    /// Feed-forward actors, otherwise identical.
    Mappo,
    Random,
    /// Analytic equilibrium strategies.
    Oracle,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mablppo => "mablppo",
            Self::Mappo => "mappo",
            Self::Random => "random",
            Self::Oracle => "oracle",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, Self::Mablppo | Self::Mappo)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub clip_eps: f64,
    pub discount_gamma: f64,
    pub gae_lambda: f64,
    /// Update every `batch_size` environment steps.
    pub batch_size: usize,
    pub epochs_per_batch: usize,
    pub minibatch_size: usize,
    pub episodes: usize,
    pub entropy_coef: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub max_grad_norm: Option<f64>,
    pub normalize_advantages: bool,
    pub lstm_hidden: usize,
    pub actor_widths: Vec<usize>,
    pub critic_widths: Vec<usize>,
    pub log_std_init: f64,
    /// Log-stds are projected back into this range after every step.
    pub log_std_range: (f64, f64),
    pub divergence_limit: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            discount_gamma: 0.0,
            gae_lambda: 0.95,
            batch_size: 50,
            epochs_per_batch: 10,
            minibatch_size: 50,
            episodes: 300,
            entropy_coef: 1e-3,
            actor_lr: crate::nn::ACTOR_LR,
            critic_lr: crate::nn::CRITIC_LR,
            max_grad_norm: Some(1.0),
            normalize_advantages: true,
            lstm_hidden: 16,
            actor_widths: vec![32, 32],
            critic_widths: vec![32, 32],
            log_std_init: -0.5,
            log_std_range: (-4.0, 1.0),
            divergence_limit: 1e6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), MarlError> {
        let bad = |m: &str| Err(MarlError::Config(m.into()));
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must be in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.discount_gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and lambda must be in [0, 1]");
        }
        if self.batch_size == 0 || self.epochs_per_batch == 0 || self.minibatch_size == 0 {
            return bad("batch_size, epochs_per_batch and minibatch_size must be >= 1");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.lstm_hidden == 0 || self.actor_widths.contains(&0) || self.critic_widths.contains(&0) {
            return bad("layer widths must be >= 1");
        }
        if self.log_std_range.0 > self.log_std_range.1 {
            return bad("log_std_range must be ordered");
        }
        Ok(())
    }
}
