use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AgentId, EnvConfig, EnvError, Observation};
use crate::game::{all_follower_utilities, all_leader_utilities, BandwidthMatrix, GameInstance, PriceVector};

/// Maps a raw utility to the training reward.
pub fn reward_from_utility(utility: f64, cfg: &EnvConfig) -> f64 {
    utility * cfg.reward_scale
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub leader_rewards: Vec<f64>,
    pub follower_rewards: Vec<f64>,
    pub leader_utilities: Vec<f64>,
    pub follower_utilities: Vec<f64>,
    /// Actions after clamping.
    pub prices: PriceVector,
    pub bandwidths: BandwidthMatrix,
    /// Leader observations for the next round.
    pub next_observations: Vec<Observation>,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct MarketEnv {
    cfg: EnvConfig,
    base: GameInstance,
    game: GameInstance,
    history: VecDeque<(BandwidthMatrix, PriceVector)>,
    t: usize,
    posted: Option<PriceVector>,
    clamp_count: u64,
    episodes_started: u64,
    rng: ChaCha8Rng,
}

impl MarketEnv {
    pub fn new(cfg: EnvConfig, game: GameInstance) -> Result<Self, EnvError> {
        cfg.validate()?;
        game.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let mut env = Self {
            cfg,
            base: game.clone(),
            game,
            history: VecDeque::new(),
            t: 0,
            posted: None,
            clamp_count: 0,
            episodes_started: 0,
            rng,
        };
        env.clear_history();
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    /// The instance of the current episode.
    pub fn game(&self) -> &GameInstance {
        &self.game
    }

    pub fn num_rsus(&self) -> usize {
        self.game.num_rsus()
    }

    pub fn num_avs(&self) -> usize {
        self.game.num_avs()
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn clamp_count(&self) -> u64 {
        self.clamp_count
    }

    /// Episode-local random stream, also used by agents to sample actions.
    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn obs_len(&self, agent: AgentId) -> usize {
        Observation::encoded_len(
            self.num_rsus(),
            self.num_avs(),
            self.cfg.history_window,
            !agent.is_leader(),
        )
    }

    fn clear_history(&mut self) {
        let (r, v) = (self.base.num_rsus(), self.base.num_avs());
        self.history = (0..self.cfg.history_window)
            .map(|_| (BandwidthMatrix::zeros(r, v), PriceVector::zeros(r)))
            .collect();
    }

    /// Starts the next episode. Episode `k` (counting from 0) is seeded with
    /// `rng_seed + k`. Returns the leaders' observations.
    pub fn reset(&mut self) -> Vec<Observation> {
        let index = self.episodes_started;
        self.reset_episode(index)
    }

    pub fn reset_episode(&mut self, index: u64) -> Vec<Observation> {
        self.episodes_started = index + 1;
        self.rng = ChaCha8Rng::seed_from_u64(self.cfg.rng_seed.wrapping_add(index));
        self.game = self.base.clone();
        if self.cfg.resample_tasks {
            let (a, d) = (self.cfg.resample_importance, self.cfg.resample_deadline);
            for task in &mut self.game.avs {
                task.importance = self.rng.random_range(a.0..=a.1);
                task.deadline = self.rng.random_range(d.0..=d.1);
            }
        }
        self.clear_history();
        self.t = 0;
        self.posted = None;
        self.leader_observations()
    }

    pub fn leader_observations(&self) -> Vec<Observation> {
        (0..self.num_rsus())
            .map(|r| Observation {
                agent: AgentId::Leader(r),
                window: self.history.iter().cloned().collect(),
                current_prices: None,
            })
            .collect()
    }

    fn follower_observations(&self, prices: &PriceVector) -> Vec<Observation> {
        (0..self.num_avs())
            .map(|v| Observation {
                agent: AgentId::Follower(v),
                window: self
                    .history
                    .iter()
                    .map(|(b, p)| {
                        let mut b = b.clone();
                        b.set_column(v, &vec![0.0; self.num_rsus()]);
                        (b, p.clone())
                    })
                    .collect(),
                current_prices: Some(prices.clone()),
            })
            .collect()
    }

    /// Leader phase: clamps and commits prices, returns the followers' observations.
    pub fn post_prices(&mut self, prices: &PriceVector) -> Result<Vec<Observation>, EnvError> {
        if self.posted.is_some() {
            return Err(EnvError::Turn("prices already posted this round"));
        }
        if self.t >= self.cfg.episode_length {
            return Err(EnvError::Turn("episode is over; call reset"));
        }
        if prices.len() != self.num_rsus() {
            return Err(EnvError::Dimension {
                what: "price vector",
                expected: self.num_rsus(),
                found: prices.len(),
            });
        }
        let mut applied = Vec::with_capacity(prices.len());
        for (r, p) in prices.0.iter().enumerate() {
            if !p.is_finite() {
                return Err(EnvError::NonFinite {
                    agent: AgentId::Leader(r),
                    t: self.t,
                });
            }
            let c = self.game.rsus[r].clamp_price(*p);
            if c != *p {
                self.clamp_count += 1;
                log::debug!("rsu{r} price {p} clamped to {c} at t={}", self.t);
            }
            applied.push(c);
        }
        let applied = PriceVector(applied);
        let obs = self.follower_observations(&applied);
        self.posted = Some(applied);
        Ok(obs)
    }

    /// Follower phase: clamps demands, pays out rewards and shifts the window.
    pub fn submit_bandwidths(&mut self, bandwidths: &BandwidthMatrix) -> Result<StepOutcome, EnvError> {
        let Some(prices) = self.posted.take() else {
            return Err(EnvError::Turn("followers acted before leaders"));
        };
        let (r_n, v_n) = (self.num_rsus(), self.num_avs());
        if bandwidths.rsus() != r_n || bandwidths.avs() != v_n {
            return Err(EnvError::Dimension {
                what: "bandwidth matrix",
                expected: r_n * v_n,
                found: bandwidths.rsus() * bandwidths.avs(),
            });
        }
        let mut applied = BandwidthMatrix::zeros(r_n, v_n);
        let cap = self.game.max_bandwidth;
        for v in 0..v_n {
            for r in 0..r_n {
                let b = bandwidths.get(r, v);
                if !b.is_finite() {
                    return Err(EnvError::NonFinite {
                        agent: AgentId::Follower(v),
                        t: self.t,
                    });
                }
                let c = b.clamp(0.0, cap);
                if c != b {
                    self.clamp_count += 1;
                    log::debug!("av{v} demand {b} at rsu{r} clamped to {c} at t={}", self.t);
                }
                applied.set(r, v, c);
            }
        }
        let leader_utilities = all_leader_utilities(&applied, &prices, &self.game);
        let follower_utilities = all_follower_utilities(&applied, &prices, &self.game);
        let scale = |u: &Vec<f64>| u.iter().map(|x| reward_from_utility(*x, &self.cfg)).collect();
        let leader_rewards = scale(&leader_utilities);
        let follower_rewards = scale(&follower_utilities);
        self.history.pop_front();
        self.history.push_back((applied.clone(), prices.clone()));
        self.t += 1;
        Ok(StepOutcome {
            leader_rewards,
            follower_rewards,
            leader_utilities,
            follower_utilities,
            prices,
            bandwidths: applied,
            next_observations: self.leader_observations(),
            done: self.t == self.cfg.episode_length,
        })
    }

    /// Both phases at once.
    pub fn step(&mut self, prices: &PriceVector, bandwidths: &BandwidthMatrix) -> Result<StepOutcome, EnvError> {
        self.post_prices(prices)?;
        self.submit_bandwidths(bandwidths)
    }
}
