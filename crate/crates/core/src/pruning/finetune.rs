use serde::{Deserialize, Serialize};

use super::{extract_mask, px_saliency, PruneError, SaliencyOptions};
use crate::env::{play_round, Agent, MarketEnv};
use crate::marl::{evaluate, train, PolicyAgent, TrainConfig};

/// Actor inputs visited by the deterministic policy and its mean actions there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneDataset {
    /// Scaled encodings, exactly what the actor consumes.
    pub inputs: Vec<Vec<f64>>,
    /// Squashed mean actions.
    pub labels: Vec<Vec<f64>>,
}

impl PruneDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Rolls every agent deterministically and records `n` observations of
/// `agents[agent]`. Episode `k` of the roll uses environment episode `seed + k`.
pub fn build_prune_dataset(
    env: &mut MarketEnv,
    agents: &[PolicyAgent],
    agent: usize,
    n: usize,
    seed: u64,
) -> Result<PruneDataset, PruneError> {
    if n == 0 {
        return Err(PruneError::EmptyDataset);
    }
    let ppo = agents[agent]
        .as_ppo()
        .ok_or_else(|| PruneError::NotLearned(agents[agent].id().to_string()))?;
    let refs: Vec<&dyn Agent> = agents.iter().map(|a| a as &dyn Agent).collect();
    let mut data = PruneDataset {
        inputs: Vec::with_capacity(n),
        labels: Vec::with_capacity(n),
    };
    let mut episode = seed;
    while data.len() < n {
        let mut obs = env.reset_episode(episode);
        episode = episode.wrapping_add(1);
        while data.len() < n {
            let round = play_round(env, &refs, &obs, false)?;
            data.inputs.push(ppo.scale_input(&round.observations[agent]));
            data.labels.push(round.decisions[agent].action.clone());
            obs = round.outcome.next_observations;
            if round.outcome.done {
                break;
            }
        }
    }
    Ok(data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneConfig {
    pub dataset_size: usize,
    pub dataset_seed: u64,
    pub saliency: SaliencyOptions,
    /// Fine-tuning length as a fraction of the original training episodes.
    pub finetune_fraction: f64,
    pub eval_episodes: usize,
    pub histogram_bins: usize,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            dataset_size: 200,
            dataset_seed: 10_000,
            saliency: SaliencyOptions::default(),
            finetune_fraction: 0.2,
            eval_episodes: 2,
            histogram_bins: 12,
        }
    }
}

/// Histogram of `log10` of the positive scores; zeros are counted apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreHistogram {
    pub zeros: usize,
    pub log10_edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn score_histogram(scores: &[f64], bins: usize) -> ScoreHistogram {
    let logs: Vec<f64> = scores.iter().filter(|s| **s > 0.0).map(|s| s.log10()).collect();
    let zeros = scores.len() - logs.len();
    if logs.is_empty() || bins == 0 {
        return ScoreHistogram {
            zeros,
            log10_edges: Vec::new(),
            counts: Vec::new(),
        };
    }
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let log10_edges = (0..=bins).map(|k| lo + k as f64 * width).collect();
    let mut counts = vec![0; bins];
    for l in logs {
        counts[(((l - lo) / width) as usize).min(bins - 1)] += 1;
    }
    ScoreHistogram {
        zeros,
        log10_edges,
        counts,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentPruneReport {
    pub agent: String,
    pub target_density: f64,
    pub achieved_density: f64,
    pub scored: usize,
    pub kept: usize,
    pub histogram: ScoreHistogram,
}

/// Rewards are mean-action evaluations, summed over agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub agents: Vec<AgentPruneReport>,
    pub pre_reward: f64,
    pub post_prune_reward: f64,
    pub post_finetune_reward: f64,
    pub finetune_episodes: usize,
    /// Pruned entries seen non-zero after any fine-tuning update.
    pub mask_violations: usize,
}

impl PruneReport {
    pub fn to_json(&self) -> Result<String, serde_json::Error> {
        serde_json::to_string_pretty(self)
    }
}

/// Prunes `agents[k]` to `densities[k]` (skipping `None`), then fine-tunes
/// every learned agent with the pruned entries held at zero.
/// Fine-tuning is skipped when nothing was removed.
pub fn prune_and_finetune(
    env: &mut MarketEnv,
    agents: &mut [PolicyAgent],
    densities: &[Option<f64>],
    cfg: &PruneConfig,
    train_cfg: &TrainConfig,
) -> Result<PruneReport, PruneError> {
    if densities.len() != agents.len() {
        return Err(PruneError::Tiers(format!(
            "{} densities for {} agents",
            densities.len(),
            agents.len()
        )));
    }
    let pre = evaluate(env, agents, cfg.eval_episodes)?;
    let mut reports = Vec::new();
    let mut removed = 0usize;
    for (k, density) in densities.iter().enumerate() {
        let Some(density) = *density else { continue };
        let data = build_prune_dataset(env, agents, k, cfg.dataset_size, cfg.dataset_seed)?;
        let id = agents[k].id().to_string();
        let ppo = agents[k].as_ppo_mut().ok_or_else(|| PruneError::NotLearned(id.clone()))?;
        let saliency = px_saliency(&ppo.actor, &data.inputs, &cfg.saliency)?;
        let mask = extract_mask(&saliency.scores, density)?;
        let mut full = mask.expand(&saliency, ppo.actor.num_params());
        if let Some(prev) = &ppo.mask {
            full.iter_mut().zip(prev).for_each(|(a, b)| *a &= *b);
        }
        removed += full.iter().filter(|b| !**b).count();
        ppo.mask = Some(full);
        ppo.apply_mask();
        log::info!("{id}: kept {} of {} weights", mask.kept(), mask.bits.len());
        reports.push(AgentPruneReport {
            agent: id,
            target_density: density,
            achieved_density: mask.density(),
            scored: mask.bits.len(),
            kept: mask.kept(),
            histogram: score_histogram(&saliency.scores, cfg.histogram_bins),
        });
    }
    let post_prune = evaluate(env, agents, cfg.eval_episodes)?;
    let mut finetune_episodes = 0;
    let mut mask_violations = 0;
    let mut post_finetune = post_prune.mean_total_reward;
    if removed > 0 && cfg.finetune_fraction > 0.0 {
        finetune_episodes = (cfg.finetune_fraction * train_cfg.episodes as f64).ceil() as usize;
        let ft = TrainConfig {
            episodes: finetune_episodes,
            ..train_cfg.clone()
        };
        let rep = train(env, agents, &ft)?;
        mask_violations = rep.mask_violations;
        post_finetune = evaluate(env, agents, cfg.eval_episodes)?.mean_total_reward;
    }
    Ok(PruneReport {
        agents: reports,
        pre_reward: pre.mean_total_reward,
        post_prune_reward: post_prune.mean_total_reward,
        post_finetune_reward: post_finetune,
        finetune_episodes,
        mask_violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::game::InstanceSampler;
    use crate::marl::{build_agents, Algorithm};

    fn setup(alg: Algorithm) -> (MarketEnv, Vec<PolicyAgent>, TrainConfig) {
        let g = InstanceSampler::default().with_size(1, 2).default_instance();
        let env = MarketEnv::new(
            EnvConfig {
                episode_length: 10,
                ..EnvConfig::default()
            },
            g.clone(),
        )
        .unwrap();
        let cfg = TrainConfig {
            episodes: 5,
            batch_size: 10,
            epochs_per_batch: 2,
            minibatch_size: 10,
            lstm_hidden: 3,
            actor_widths: vec![6],
            critic_widths: vec![6],
            ..TrainConfig::default()
        };
        let agents = build_agents(alg, &g, env.config(), &cfg).unwrap();
        (env, agents, cfg)
    }

    #[test]
    fn dataset_is_deterministic_and_labelled_with_means() {
        let (mut env, agents, _) = setup(Algorithm::Mablppo);
        let one = build_prune_dataset(&mut env, &agents, 0, 1, 3).unwrap();
        assert_eq!(one.len(), 1);
        let a = build_prune_dataset(&mut env, &agents, 1, 25, 3).unwrap();
        let b = build_prune_dataset(&mut env, &agents, 1, 25, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 25);
        let ppo = agents[1].as_ppo().unwrap();
        for (x, y) in a.inputs.iter().zip(&a.labels) {
            let mean = ppo.head.squash(&ppo.actor.forward(x).unwrap());
            assert_eq!(&mean, y);
        }
        assert!(build_prune_dataset(&mut env, &agents, 0, 0, 3).is_err());
    }

    #[test]
    fn non_learned_agents_cannot_be_pruned() {
        let (mut env, mut agents, cfg) = setup(Algorithm::Random);
        let r = prune_and_finetune(&mut env, &mut agents, &[Some(0.5), None, None], &PruneConfig::default(), &cfg);
        assert!(matches!(r, Err(PruneError::NotLearned(_))));
    }

    #[test]
    fn full_density_changes_nothing() {
        let (mut env, mut agents, cfg) = setup(Algorithm::Mablppo);
        let before = agents.clone();
        let rep = prune_and_finetune(&mut env, &mut agents, &[Some(1.0); 3], &PruneConfig::default(), &cfg).unwrap();
        assert_eq!(rep.pre_reward, rep.post_prune_reward);
        assert_eq!(rep.finetune_episodes, 0);
        for (a, b) in agents.iter().zip(&before) {
            assert_eq!(a.as_ppo().unwrap().actor, b.as_ppo().unwrap().actor);
        }
    }

    #[test]
    fn pruned_weights_stay_zero_through_finetuning() {
        let (mut env, mut agents, cfg) = setup(Algorithm::Mablppo);
        let rep = prune_and_finetune(&mut env, &mut agents, &[Some(0.3), Some(0.5), None], &PruneConfig::default(), &cfg)
            .unwrap();
        assert_eq!(rep.finetune_episodes, 1);
        assert_eq!(rep.mask_violations, 0);
        assert_eq!(rep.agents.len(), 2);
        for a in &agents[..2] {
            let p = a.as_ppo().unwrap();
            let mask = p.mask.as_ref().unwrap();
            assert!(mask.iter().zip(&p.actor.params.values).all(|(k, v)| *k || *v == 0.0));
        }
        assert!(agents[2].as_ppo().unwrap().mask.is_none());
        let json = rep.to_json().unwrap();
        let back: PruneReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.agents[0].kept, rep.agents[0].kept);
    }

    #[test]
    fn histogram_counts_every_score() {
        let h = score_histogram(&[0.0, 1.0, 10.0, 100.0, 0.0], 2);
        assert_eq!(h.zeros, 2);
        assert_eq!(h.counts, vec![1, 2]);
        assert_eq!(h.log10_edges, vec![0.0, 1.0, 2.0]);
        assert!(score_histogram(&[0.0], 4).counts.is_empty());
    }
}
