//! Experiment plumbing: TOML specs, sweep execution, long-format metric
//! CSVs, cross-run summaries with trend checks, and agent checkpoints.

mod metrics;
mod report;
mod run;
mod store;

pub use metrics::{read_metrics, write_metrics, MetricsRow, METRICS_SCHEMA_VERSION};
pub use report::{compare_report, compare_rows, SummaryRow, SummaryTable, TrendCheck};
pub use run::{run_experiment, run_point, SweepPoint};
pub use store::{load_agents, save_agents, RunMetadata};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvConfig, EnvError};
use crate::game::{GameError, GameInstance, InstanceSampler};
use crate::marl::{Algorithm, MarlError, TrainConfig};
use crate::nn::NnError;
use crate::pruning::{PruneConfig, PruneError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment spec: {0}")]
    Spec(String),
    #[error("metrics schema mismatch in {path}: {reason}")]
    Schema { path: PathBuf, reason: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Marl(#[from] MarlError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),
    #[error(transparent)]
    Threads(#[from] rayon::ThreadPoolBuildError),
}

/// Where a sweep point's market comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GameSource {
    /// The sampler's fixed reference market at the point's size.
    Reference,
    /// One sampler draw per size, from this seed.
    Sampled { seed: u64 },
    /// A fixed market; the sweep must match its size.
    Instance(GameInstance),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepAxes {
    pub num_rsus: Vec<usize>,
    pub num_avs: Vec<usize>,
}

impl Default for SweepAxes {
    fn default() -> Self {
        let s = InstanceSampler::default();
        Self {
            num_rsus: vec![s.num_rsus],
            num_avs: vec![s.num_avs],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub name: String,
    pub game: GameSource,
    pub sampler: InstanceSampler,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub prune: PruneConfig,
    pub algorithms: Vec<Algorithm>,
    /// Densities each learned roster is pruned to after training.
    pub densities: Vec<f64>,
    pub sweep: SweepAxes,
    pub repetitions: usize,
    /// Seed of repetition `k`; repetitions past the list use `k`.
    pub seeds: Vec<u64>,
    pub eval_episodes: usize,
    /// Episodes averaged into `final_total_reward`.
    pub final_window: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            game: GameSource::Reference,
            sampler: InstanceSampler::default(),
            env: EnvConfig::default(),
            train: TrainConfig::default(),
            prune: PruneConfig::default(),
            algorithms: vec![Algorithm::Mablppo, Algorithm::Mappo, Algorithm::Random, Algorithm::Oracle],
            densities: Vec::new(),
            sweep: SweepAxes::default(),
            repetitions: 1,
            seeds: Vec::new(),
            eval_episodes: 2,
            final_window: 100,
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let spec: Self = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, HarnessError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Spec(m.into()));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad("name must be a non-empty file-name component");
        }
        if self.repetitions == 0 {
            return bad("repetitions must be >= 1");
        }
        if self.eval_episodes == 0 || self.final_window == 0 {
            return bad("eval_episodes and final_window must be >= 1");
        }
        if self.sweep.num_rsus.contains(&0) || self.sweep.num_avs.contains(&0) {
            return bad("population sizes must be >= 1");
        }
        if self.densities.iter().any(|d| !(*d > 0.0 && *d <= 1.0)) {
            return bad("densities must be in (0, 1]");
        }
        self.env.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn seed(&self, repetition: usize) -> u64 {
        self.seeds.get(repetition).copied().unwrap_or(repetition as u64)
    }

    /// Market for one sweep point.
    pub fn instance(&self, num_rsus: usize, num_avs: usize) -> Result<GameInstance, HarnessError> {
        let sampler = self.sampler.clone().with_size(num_rsus, num_avs);
        match &self.game {
            GameSource::Reference => Ok(sampler.default_instance()),
            GameSource::Sampled { seed } => Ok(sampler.sample_seeded(*seed)),
            GameSource::Instance(g) => {
                if (g.num_rsus(), g.num_avs()) != (num_rsus, num_avs) {
                    return Err(HarnessError::Spec(format!(
                        "fixed instance is {}x{}, sweep point is {num_rsus}x{num_avs}",
                        g.num_rsus(),
                        g.num_avs()
                    )));
                }
                Ok(g.clone())
            }
        }
    }

    /// Sweep points in output order: RSUs, then AVs, then repetitions.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::new();
        for &r in &self.sweep.num_rsus {
            for &v in &self.sweep.num_avs {
                for k in 0..self.repetitions {
                    out.push(SweepPoint {
                        num_rsus: r,
                        num_avs: v,
                        seed: self.seed(k),
                    });
                }
            }
        }
        out
    }
}
