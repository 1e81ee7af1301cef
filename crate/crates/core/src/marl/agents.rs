use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ppo::{compute_td_and_advantage, critic_loss, normalize, ppo_actor_loss, PpoSample};
use super::train::UpdateStats;
use super::{Algorithm, MarlError, TrainConfig};
use crate::env::{Agent, AgentId, Decision, EnvConfig, Observation, TrajectoryBuffer};
use crate::game::{follower_best_response, solve_equilibrium, GameInstance, PriceVector, SolverOptions};
use crate::nn::{
    ActionBounds, Activation, Adam, BiLstmSpec, Encoder, GaussianHead, NetSpec, PolicyNet,
};

/// Per-entry multipliers that bring an observation encoding to order one:
/// bandwidths are divided by the cap, prices by the RSU's maximum price.
pub fn obs_scale(g: &GameInstance, window: usize, follower: bool) -> Vec<f64> {
    let (r_n, v_n) = (g.num_rsus(), g.num_avs());
    let prices: Vec<f64> = g.rsus.iter().map(|r| 1.0 / r.max_price).collect();
    let mut out = Vec::new();
    for _ in 0..window {
        out.extend(std::iter::repeat_n(1.0 / g.max_bandwidth, r_n * v_n));
        out.extend_from_slice(&prices);
    }
    if follower {
        out.extend_from_slice(&prices);
    }
    out
}

fn bounds_for(id: AgentId, g: &GameInstance) -> ActionBounds {
    let (lower, upper) = match id {
        AgentId::Leader(r) => (vec![g.rsus[r].base_cost], vec![g.rsus[r].max_price]),
        AgentId::Follower(_) => (vec![0.0; g.num_rsus()], vec![g.max_bandwidth; g.num_rsus()]),
    };
    ActionBounds::new(lower, upper).expect("instance bounds are ordered")
}

/// Learned agent: Gaussian actor, state-value critic and their optimisers.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoAgent {
    pub id: AgentId,
    pub actor: PolicyNet,
    /// Snapshot of the actor that collected the current batch.
    pub actor_old: PolicyNet,
    pub critic: PolicyNet,
    pub head: GaussianHead,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    /// Kept-parameter mask over the actor; pruned entries stay at zero.
    pub mask: Option<Vec<bool>>,
    pub obs_scale: Vec<f64>,
}

impl PpoAgent {
    pub fn new<R: Rng>(
        id: AgentId,
        recurrent: bool,
        g: &GameInstance,
        env_cfg: &EnvConfig,
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Result<Self, MarlError> {
        let follower = !id.is_leader();
        let scale = obs_scale(g, env_cfg.history_window, follower);
        let input_dim = scale.len();
        let head = GaussianHead::new(bounds_for(id, g));
        let encoder = if recurrent {
            Encoder::BiLstm(BiLstmSpec {
                steps: env_cfg.history_window,
                step_dim: g.num_rsus() * g.num_avs() + g.num_rsus(),
                hidden_dim: cfg.lstm_hidden,
            })
        } else {
            Encoder::Mlp
        };
        let actor_spec = NetSpec {
            input_dim,
            encoder,
            mlp_widths: cfg.actor_widths.clone(),
            activation: Activation::Relu,
            output_dim: head.bounds.dim(),
            log_std: true,
        };
        let critic_spec = NetSpec {
            input_dim,
            encoder: Encoder::Mlp,
            mlp_widths: cfg.critic_widths.clone(),
            activation: Activation::Relu,
            output_dim: 1,
            log_std: false,
        };
        let actor = PolicyNet::initialized(actor_spec, rng, cfg.log_std_init)?;
        let critic = PolicyNet::initialized(critic_spec, rng, 0.0)?;
        Ok(Self::from_parts(id, actor, critic, head, scale, cfg))
    }

    pub fn from_parts(
        id: AgentId,
        actor: PolicyNet,
        critic: PolicyNet,
        head: GaussianHead,
        obs_scale: Vec<f64>,
        cfg: &TrainConfig,
    ) -> Self {
        let mut actor_opt = Adam::new(actor.num_params(), cfg.actor_lr);
        let mut critic_opt = Adam::new(critic.num_params(), cfg.critic_lr);
        if let Some(c) = cfg.max_grad_norm {
            actor_opt = actor_opt.with_grad_clip(c);
            critic_opt = critic_opt.with_grad_clip(c);
        }
        Self {
            id,
            actor_old: actor.clone(),
            actor,
            critic,
            head,
            actor_opt,
            critic_opt,
            mask: None,
            obs_scale,
        }
    }

    /// Fresh optimiser state, e.g. before fine-tuning.
    pub fn reset_optimizers(&mut self, cfg: &TrainConfig) {
        let fresh = Self::from_parts(
            self.id,
            self.actor.clone(),
            self.critic.clone(),
            self.head.clone(),
            self.obs_scale.clone(),
            cfg,
        );
        self.actor_opt = fresh.actor_opt;
        self.critic_opt = fresh.critic_opt;
    }

    pub fn scale_input(&self, encoded: &[f64]) -> Vec<f64> {
        encoded.iter().zip(&self.obs_scale).map(|(x, s)| x * s).collect()
    }

    /// Deterministic action for an encoded observation.
    pub fn mean_action(&self, encoded: &[f64]) -> Result<Vec<f64>, MarlError> {
        let mean = self.actor.forward(&self.scale_input(encoded))?;
        Ok(self.head.squash(&mean))
    }

    /// Zeroes pruned actor weights.
    pub fn apply_mask(&mut self) {
        if let Some(mask) = &self.mask {
            for (v, keep) in self.actor.params.values.iter_mut().zip(mask) {
                if !keep {
                    *v = 0.0;
                }
            }
        }
    }

    /// PPO update on one batch: advantages, then `epochs_per_batch` passes of
    /// shuffled minibatch steps for the actor and the critic.
    pub fn update(
        &mut self,
        buf: &TrajectoryBuffer,
        cfg: &TrainConfig,
        rng: &mut ChaCha8Rng,
        episode: usize,
    ) -> Result<UpdateStats, MarlError> {
        if buf.is_empty() {
            return Ok(UpdateStats::default());
        }
        let bootstrap = if *buf.dones.last().expect("non-empty") {
            0.0
        } else {
            *buf.values.last().expect("non-empty")
        };
        let (_, adv, returns) = compute_td_and_advantage(
            &buf.rewards,
            &buf.values,
            &buf.dones,
            cfg.discount_gamma,
            cfg.gae_lambda,
            bootstrap,
        )?;
        let adv = if cfg.normalize_advantages { normalize(&adv) } else { adv };
        let inputs: Vec<Vec<f64>> = buf.observations.iter().map(|o| self.scale_input(o)).collect();
        let mut order: Vec<usize> = (0..buf.len()).collect();
        let mut stats = UpdateStats::default();
        let mut batches = 0usize;
        for _ in 0..cfg.epochs_per_batch {
            order.shuffle(rng);
            for chunk in order.chunks(cfg.minibatch_size) {
                let samples: Vec<PpoSample> = chunk
                    .iter()
                    .map(|&i| PpoSample {
                        input: &inputs[i],
                        raw_action: &buf.raw_actions[i],
                        log_prob_old: buf.log_probs[i],
                        advantage: adv[i],
                    })
                    .collect();
                let mut grad = vec![0.0; self.actor.num_params()];
                let a = ppo_actor_loss(
                    &self.actor,
                    &self.head,
                    &self.actor.params.values,
                    &samples,
                    cfg.clip_eps,
                    cfg.entropy_coef,
                    Some(&mut grad),
                )?;
                self.guard("actor", a.loss, cfg, episode)?;
                self.actor_opt
                    .step(&mut self.actor.params.values, &grad, self.mask.as_deref())?;
                if let Some(mask) = &self.mask {
                    stats.mask_violations += mask
                        .iter()
                        .zip(&self.actor.params.values)
                        .filter(|(keep, v)| !**keep && **v != 0.0)
                        .count();
                }
                if let Some(o) = self.actor.log_std_offset() {
                    let (lo, hi) = cfg.log_std_range;
                    for v in &mut self.actor.params.values[o..o + self.actor.spec.output_dim] {
                        *v = v.clamp(lo, hi);
                    }
                }

                let xs: Vec<&[f64]> = chunk.iter().map(|&i| inputs[i].as_slice()).collect();
                let ys: Vec<f64> = chunk.iter().map(|&i| returns[i]).collect();
                let mut cgrad = vec![0.0; self.critic.num_params()];
                let c = critic_loss(&self.critic, &self.critic.params.values, &xs, &ys, Some(&mut cgrad))?;
                self.guard("critic", c, cfg, episode)?;
                self.critic_opt.step(&mut self.critic.params.values, &cgrad, None)?;

                stats.actor_loss += a.loss;
                stats.critic_loss += c;
                stats.entropy += a.entropy;
                stats.excluded += a.excluded;
                batches += 1;
            }
        }
        let n = batches.max(1) as f64;
        stats.actor_loss /= n;
        stats.critic_loss /= n;
        stats.entropy /= n;
        self.actor_old = self.actor.clone();
        Ok(stats)
    }

    fn guard(&self, which: &'static str, value: f64, cfg: &TrainConfig, episode: usize) -> Result<(), MarlError> {
        if !value.is_finite() || value.abs() > cfg.divergence_limit {
            log::error!("{} {which} loss {value:e} at episode {episode}", self.id);
            return Err(MarlError::Diverged {
                agent: self.id.to_string(),
                which,
                value,
                episode,
            });
        }
        Ok(())
    }
}

impl Agent for PpoAgent {
    fn id(&self) -> AgentId {
        self.id
    }

    fn decide(&self, _: &Observation, encoded: &[f64], rng: &mut ChaCha8Rng, explore: bool) -> Result<Decision, String> {
        let x = self.scale_input(encoded);
        let mean = self.actor.forward(&x).map_err(|e| e.to_string())?;
        let log_std = self.actor.log_std();
        let raw = if explore {
            self.head.sample(&mean, log_std, rng)
        } else {
            mean.clone()
        };
        let value = self.critic.forward(&x).map_err(|e| e.to_string())?[0];
        Ok(Decision {
            action: self.head.squash(&raw),
            log_prob: self.head.log_prob(&raw, &mean, log_std),
            raw,
            value,
        })
    }
}

/// Uniform actions over the admissible box, whether exploring or not.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomAgent {
    pub id: AgentId,
    pub bounds: ActionBounds,
}

impl Agent for RandomAgent {
    fn id(&self) -> AgentId {
        self.id
    }

    fn decide(&self, _: &Observation, _: &[f64], rng: &mut ChaCha8Rng, _: bool) -> Result<Decision, String> {
        let action: Vec<f64> = self
            .bounds
            .lower
            .iter()
            .zip(&self.bounds.upper)
            .map(|(lo, hi)| rng.random_range(*lo..=*hi))
            .collect();
        let log_prob = -self
            .bounds
            .lower
            .iter()
            .zip(&self.bounds.upper)
            .map(|(lo, hi)| (hi - lo).ln())
            .sum::<f64>();
        Ok(Decision {
            raw: action.clone(),
            action,
            log_prob,
            value: 0.0,
        })
    }
}

/// Plays the analytic equilibrium: leaders post their equilibrium price,
/// followers best-respond to the prices they observe.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleAgent {
    pub id: AgentId,
    pub game: GameInstance,
    pub equilibrium_prices: PriceVector,
}

impl OracleAgent {
    pub fn new(id: AgentId, game: &GameInstance) -> Result<Self, MarlError> {
        let eq = solve_equilibrium(game, &SolverOptions::default())?;
        Ok(Self {
            id,
            game: game.clone(),
            equilibrium_prices: eq.prices,
        })
    }
}

impl Agent for OracleAgent {
    fn id(&self) -> AgentId {
        self.id
    }

    fn decide(&self, obs: &Observation, _: &[f64], _: &mut ChaCha8Rng, _: bool) -> Result<Decision, String> {
        let action = match self.id {
            AgentId::Leader(r) => vec![self.equilibrium_prices.0[r]],
            AgentId::Follower(v) => {
                let prices = obs
                    .current_prices
                    .as_ref()
                    .ok_or("follower observation without current prices")?;
                follower_best_response(v, prices, &self.game)
            }
        };
        Ok(Decision {
            raw: action.clone(),
            action,
            log_prob: 0.0,
            value: 0.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyAgent {
    Ppo(Box<PpoAgent>),
    Random(RandomAgent),
    Oracle(Box<OracleAgent>),
}

impl PolicyAgent {
    pub fn as_ppo(&self) -> Option<&PpoAgent> {
        match self {
            Self::Ppo(a) => Some(a),
            _ => None,
        }
    }

    pub fn as_ppo_mut(&mut self) -> Option<&mut PpoAgent> {
        match self {
            Self::Ppo(a) => Some(a),
            _ => None,
        }
    }

    pub fn random(id: AgentId, g: &GameInstance) -> Self {
        Self::Random(RandomAgent {
            id,
            bounds: bounds_for(id, g),
        })
    }
}

impl Agent for PolicyAgent {
    fn id(&self) -> AgentId {
        match self {
            Self::Ppo(a) => a.id,
            Self::Random(a) => a.id,
            Self::Oracle(a) => a.id,
        }
    }

    fn decide(&self, obs: &Observation, encoded: &[f64], rng: &mut ChaCha8Rng, explore: bool) -> Result<Decision, String> {
        match self {
            Self::Ppo(a) => a.decide(obs, encoded, rng, explore),
            Self::Random(a) => a.decide(obs, encoded, rng, explore),
            Self::Oracle(a) => a.decide(obs, encoded, rng, explore),
        }
    }
}

/// One agent per RSU then per AV, all of the given kind. Learned agents are
/// initialised from `cfg.seed` in roster order.
pub fn build_agents(
    algorithm: Algorithm,
    g: &GameInstance,
    env_cfg: &EnvConfig,
    cfg: &TrainConfig,
) -> Result<Vec<PolicyAgent>, MarlError> {
    cfg.validate()?;
    let ids: Vec<AgentId> = (0..g.num_rsus())
        .map(AgentId::Leader)
        .chain((0..g.num_avs()).map(AgentId::Follower))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    ids.into_iter()
        .map(|id| {
            Ok(match algorithm {
                Algorithm::Mablppo | Algorithm::Mappo => PolicyAgent::Ppo(Box::new(PpoAgent::new(
                    id,
                    algorithm == Algorithm::Mablppo,
                    g,
                    env_cfg,
                    cfg,
                    &mut rng,
                )?)),
                Algorithm::Random => PolicyAgent::random(id, g),
                Algorithm::Oracle => PolicyAgent::Oracle(Box::new(OracleAgent::new(id, g)?)),
            })
        })
        .collect()
}
