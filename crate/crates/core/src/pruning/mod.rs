//! Computation-aware pruning of trained actors: saliency from the path
//! kernel of the network, top-score masks at a density picked from the
//! device's compute tier, and masked fine-tuning.

mod companion;
mod finetune;

pub use companion::{g_pass, g_totals, h_pass, px_objective, px_saliency, SaliencyOptions, SaliencyVector};
pub use finetune::{
    build_prune_dataset, prune_and_finetune, score_histogram, AgentPruneReport, PruneConfig, PruneDataset,
    PruneReport, ScoreHistogram,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvError;
use crate::marl::MarlError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum PruneError {
    #[error("saliency not defined for this network: {0}")]
    Unsupported(String),
    #[error("pruning dataset is empty")]
    EmptyDataset,
    #[error("non-finite saliency score")]
    NonFinite,
    #[error("density {0} outside (0, 1]")]
    Density(f64),
    #[error("invalid tier table: {0}")]
    Tiers(String),
    #[error("compute capability must be positive, got {0}")]
    Tops(f64),
    #[error("agent {0} has no learned actor")]
    NotLearned(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Marl(#[from] MarlError),
}

/// Keep-bits over the scored parameters of a [`SaliencyVector`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneMask {
    pub bits: Vec<bool>,
}

impl PruneMask {
    pub fn kept(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn density(&self) -> f64 {
        if self.bits.is_empty() {
            return 1.0;
        }
        self.kept() as f64 / self.bits.len() as f64
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.bits.len() == other.bits.len() && self.bits.iter().zip(&other.bits).all(|(a, b)| !a || *b)
    }

    /// Mask over the whole parameter vector: unscored entries (biases,
    /// log-stds, and LSTM weights in dense-only mode) are always kept.
    pub fn expand(&self, saliency: &SaliencyVector, num_params: usize) -> Vec<bool> {
        let mut full = vec![true; num_params];
        for (i, keep) in saliency.indices.iter().zip(&self.bits) {
            full[*i] = *keep;
        }
        full
    }
}

/// Keeps the `ceil(density * m)` highest scores, ties going to the lower index.
pub fn extract_mask(scores: &[f64], density: f64) -> Result<PruneMask, PruneError> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(PruneError::Density(density));
    }
    let m = scores.len();
    // The small slack keeps e.g. 2/3 * 3 from rounding up to 3.
    let keep = ((density * m as f64) - 1e-9).ceil().clamp(0.0, m as f64) as usize;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut bits = vec![false; m];
    for &i in &order[..keep] {
        bits[i] = true;
    }
    Ok(PruneMask { bits })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tier {
    pub name: String,
    /// Admissible densities `(lower, upper]`.
    pub range: (f64, f64),
    pub density: f64,
}

/// Compute-capability tiers, lowest first. Tier `k` covers
/// `[C_k, C_{k+1})` with `C_0 = 0` and an open top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierTable {
    pub breakpoints: Vec<f64>,
    pub tiers: Vec<Tier>,
}

impl Default for TierTable {
    fn default() -> Self {
        let tier = |name: &str, lo: f64, hi: f64, density: f64| Tier {
            name: name.into(),
            range: (lo, hi),
            density,
        };
        Self {
            breakpoints: vec![10.0, 40.0],
            tiers: vec![
                tier("low", 0.0, 0.4, 0.33),
                tier("medium", 0.4, 0.8, 0.72),
                tier("high", 0.8, 1.0, 0.90),
            ],
        }
    }
}

impl TierTable {
    pub fn with_breakpoints(breakpoints: Vec<f64>) -> Result<Self, PruneError> {
        let t = Self {
            breakpoints,
            ..Self::default()
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), PruneError> {
        let bad = |m: String| Err(PruneError::Tiers(m));
        if self.tiers.len() != self.breakpoints.len() + 1 {
            return bad(format!(
                "{} breakpoints need {} tiers, got {}",
                self.breakpoints.len(),
                self.breakpoints.len() + 1,
                self.tiers.len()
            ));
        }
        if self.breakpoints.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return bad("breakpoints must be positive".into());
        }
        if self.breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return bad("breakpoints must be strictly increasing".into());
        }
        for t in &self.tiers {
            let (lo, hi) = t.range;
            if !(0.0 <= lo && lo < hi && hi <= 1.0 && t.density > lo && t.density <= hi) {
                return bad(format!("tier {} density {} outside ({lo}, {hi}]", t.name, t.density));
            }
        }
        Ok(())
    }

    pub fn tier(&self, tops: f64) -> Result<&Tier, PruneError> {
        if !(tops > 0.0) {
            return Err(PruneError::Tops(tops));
        }
        let k = self.breakpoints.iter().filter(|c| tops >= **c).count();
        Ok(&self.tiers[k])
    }
}

pub fn tier_density(tops: f64, table: &TierTable) -> Result<f64, PruneError> {
    Ok(table.tier(tops)?.density)
}
