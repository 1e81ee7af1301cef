use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::agents::PolicyAgent;
use super::{MarlError, TrainConfig};
use crate::env::{play_round, Agent, AgentId, MarketEnv, TrajectoryBuffer};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub excluded: usize,
    /// Pruned actor entries found non-zero after an optimiser step.
    pub mask_violations: usize,
}

/// Per-episode curves, indexed `[episode][agent]` in roster order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub agents: Vec<AgentId>,
    /// Sum of scaled rewards over the episode.
    pub episode_rewards: Vec<Vec<f64>>,
    /// Mean raw utility per step.
    pub episode_utilities: Vec<Vec<f64>>,
    /// Losses of the latest update at the end of the episode (NaN before the first).
    pub actor_losses: Vec<Vec<f64>>,
    pub critic_losses: Vec<Vec<f64>>,
    pub updates: usize,
    pub clamp_count: u64,
    pub mask_violations: usize,
}

impl TrainReport {
    fn new(agents: Vec<AgentId>) -> Self {
        Self {
            agents,
            episode_rewards: Vec::new(),
            episode_utilities: Vec::new(),
            actor_losses: Vec::new(),
            critic_losses: Vec::new(),
            updates: 0,
            clamp_count: 0,
            mask_violations: 0,
        }
    }

    pub fn episodes(&self) -> usize {
        self.episode_rewards.len()
    }

    /// Sum over agents of each episode's reward.
    pub fn total_rewards(&self) -> Vec<f64> {
        self.episode_rewards.iter().map(|e| e.iter().sum()).collect()
    }

    /// Mean total reward over the last `k` episodes (all of them if fewer).
    pub fn final_mean_total(&self, k: usize) -> f64 {
        let totals = self.total_rewards();
        let tail = &totals[totals.len().saturating_sub(k)..];
        if tail.is_empty() {
            return f64::NAN;
        }
        tail.iter().sum::<f64>() / tail.len() as f64
    }

    /// Mean utility of leaders over the last `k` episodes.
    pub fn final_mean_leader_utility(&self, k: usize) -> f64 {
        let rows = &self.episode_utilities[self.episode_utilities.len().saturating_sub(k)..];
        let leaders: Vec<usize> = (0..self.agents.len()).filter(|i| self.agents[*i].is_leader()).collect();
        let mut sum = 0.0;
        for row in rows {
            sum += leaders.iter().map(|i| row[*i]).sum::<f64>();
        }
        sum / (rows.len() * leaders.len()).max(1) as f64
    }

    /// `episode,agent,reward,actor_loss,critic_loss`, one row per agent per episode.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), MarlError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["episode", "agent", "reward", "actor_loss", "critic_loss"])?;
        for e in 0..self.episodes() {
            for (k, id) in self.agents.iter().enumerate() {
                w.write_record([
                    e.to_string(),
                    id.to_string(),
                    self.episode_rewards[e][k].to_string(),
                    self.actor_losses[e][k].to_string(),
                    self.critic_losses[e][k].to_string(),
                ])?;
            }
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

fn update_all(
    agents: &mut [PolicyAgent],
    buffers: &mut [TrajectoryBuffer],
    cfg: &TrainConfig,
    update_index: usize,
    episode: usize,
) -> Result<Vec<Option<UpdateStats>>, MarlError> {
    let results: Vec<Result<Option<UpdateStats>, MarlError>> = agents
        .par_iter_mut()
        .zip(buffers.par_iter_mut())
        .enumerate()
        .map(|(k, (agent, buf))| {
            let out = match agent.as_ppo_mut() {
                Some(a) => {
                    let seed = cfg
                        .seed
                        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                        .wrapping_add((update_index as u64) << 16)
                        .wrapping_add(k as u64);
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    Some(a.update(buf, cfg, &mut rng, episode)?)
                }
                None => None,
            };
            buf.clear();
            Ok(out)
        })
        .collect();
    results.into_iter().collect()
}

/// Training loop: every step leaders act, then followers, transitions are
/// stored, and all learned agents update every `batch_size` steps, after
/// which the buffers are cleared. Episode `k` is seeded `env.rng_seed + k`.
pub fn train(env: &mut MarketEnv, agents: &mut [PolicyAgent], cfg: &TrainConfig) -> Result<TrainReport, MarlError> {
    cfg.validate()?;
    let ids: Vec<AgentId> = agents.iter().map(|a| a.id()).collect();
    let mut report = TrainReport::new(ids.clone());
    let mut buffers: Vec<TrajectoryBuffer> = ids.iter().map(|id| TrajectoryBuffer::new(*id)).collect();
    let mut last: Vec<UpdateStats> = vec![
        UpdateStats {
            actor_loss: f64::NAN,
            critic_loss: f64::NAN,
            ..UpdateStats::default()
        };
        ids.len()
    ];
    let mut global_step = 0usize;
    let clamps_before = env.clamp_count();
    for episode in 0..cfg.episodes {
        let mut obs = env.reset_episode(episode as u64);
        let mut rewards = vec![0.0; ids.len()];
        let mut utilities = vec![0.0; ids.len()];
        let mut steps = 0usize;
        loop {
            let t = env.t();
            let round = {
                let refs: Vec<&dyn Agent> = agents.iter().map(|a| a as &dyn Agent).collect();
                play_round(env, &refs, &obs, true)?
            };
            let done = round.outcome.done;
            for (k, id) in ids.iter().enumerate() {
                let reward = round.reward(*id);
                rewards[k] += reward;
                utilities[k] += match id {
                    AgentId::Leader(r) => round.outcome.leader_utilities[*r],
                    AgentId::Follower(v) => round.outcome.follower_utilities[*v],
                };
                buffers[k].push(
                    episode as u64,
                    t,
                    round.observations[k].clone(),
                    round.decisions[k].clone(),
                    reward,
                    done,
                );
            }
            steps += 1;
            global_step += 1;
            if global_step % cfg.batch_size == 0 {
                let stats = update_all(agents, &mut buffers, cfg, report.updates, episode)?;
                for (k, s) in stats.into_iter().enumerate() {
                    if let Some(s) = s {
                        report.mask_violations += s.mask_violations;
                        last[k] = s;
                    }
                }
                report.updates += 1;
            }
            obs = round.outcome.next_observations;
            if done {
                break;
            }
        }
        utilities.iter_mut().for_each(|u| *u /= steps as f64);
        report.episode_rewards.push(rewards);
        report.episode_utilities.push(utilities);
        report.actor_losses.push(last.iter().map(|s| s.actor_loss).collect());
        report.critic_losses.push(last.iter().map(|s| s.critic_loss).collect());
        log::debug!("episode {episode}: total reward {:.4}", report.total_rewards()[episode]);
    }
    report.clamp_count = env.clamp_count() - clamps_before;
    Ok(report)
}

/// Mean-action evaluation over `episodes` episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub agents: Vec<AgentId>,
    /// Mean per-step utility of each agent, roster order.
    pub mean_utilities: Vec<f64>,
    pub mean_leader_utility: f64,
    pub mean_follower_utility: f64,
    /// Mean over episodes of the summed scaled rewards of all agents.
    pub mean_total_reward: f64,
}

pub fn evaluate(env: &mut MarketEnv, agents: &[PolicyAgent], episodes: usize) -> Result<EvalReport, MarlError> {
    let refs: Vec<&dyn Agent> = agents.iter().map(|a| a as &dyn Agent).collect();
    let ids: Vec<AgentId> = agents.iter().map(|a| a.id()).collect();
    let mut sums = vec![0.0; ids.len()];
    let mut total = 0.0;
    let mut steps = 0usize;
    for k in 0..episodes {
        let mut obs = env.reset_episode(k as u64);
        loop {
            let round = play_round(env, &refs, &obs, false)?;
            for (i, id) in ids.iter().enumerate() {
                sums[i] += match id {
                    AgentId::Leader(r) => round.outcome.leader_utilities[*r],
                    AgentId::Follower(v) => round.outcome.follower_utilities[*v],
                };
                total += round.reward(*id);
            }
            steps += 1;
            obs = round.outcome.next_observations;
            if round.outcome.done {
                break;
            }
        }
    }
    let steps = steps.max(1) as f64;
    let mean_utilities: Vec<f64> = sums.iter().map(|s| s / steps).collect();
    let mean_of = |leader: bool| {
        let xs: Vec<f64> = ids
            .iter()
            .zip(&mean_utilities)
            .filter(|(id, _)| id.is_leader() == leader)
            .map(|(_, u)| *u)
            .collect();
        xs.iter().sum::<f64>() / xs.len().max(1) as f64
    };
    Ok(EvalReport {
        mean_leader_utility: mean_of(true),
        mean_follower_utility: mean_of(false),
        mean_total_reward: total / episodes.max(1) as f64,
        agents: ids,
        mean_utilities,
    })
}
