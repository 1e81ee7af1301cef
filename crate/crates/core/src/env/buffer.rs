use std::io::Write;

use rand_chacha::ChaCha8Rng;

use super::{AgentId, EnvError, MarketEnv, Observation, StepOutcome};
use crate::game::{BandwidthMatrix, PriceVector};

/// One agent's choice for the current round.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    /// Action in environment units: one price for a leader, one demand per RSU for a follower.
    pub action: Vec<f64>,
    /// Pre-squash sample the log-probability refers to.
    pub raw: Vec<f64>,
    pub log_prob: f64,
    /// Critic estimate of the observation, 0 for agents without one.
    pub value: f64,
}

pub trait Agent {
    fn id(&self) -> AgentId;

    /// `explore` selects sampling over the deterministic mean action.
    fn decide(
        &self,
        obs: &Observation,
        encoded: &[f64],
        rng: &mut ChaCha8Rng,
        explore: bool,
    ) -> Result<Decision, String>;
}

pub const TRAJECTORY_CSV_HEADER: [&str; 9] = [
    "episode",
    "t",
    "agent",
    "reward",
    "value",
    "log_prob",
    "done",
    "action",
    "observation",
];

/// Per-agent aligned transition arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBuffer {
    pub agent: AgentId,
    pub episodes: Vec<u64>,
    pub steps: Vec<usize>,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub raw_actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    /// Filled by advantage estimation.
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl TrajectoryBuffer {
    pub fn new(agent: AgentId) -> Self {
        Self {
            agent,
            episodes: Vec::new(),
            steps: Vec::new(),
            observations: Vec::new(),
            actions: Vec::new(),
            raw_actions: Vec::new(),
            log_probs: Vec::new(),
            rewards: Vec::new(),
            values: Vec::new(),
            dones: Vec::new(),
            advantages: Vec::new(),
            returns: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn push(&mut self, episode: u64, t: usize, obs: Vec<f64>, d: Decision, reward: f64, done: bool) {
        self.episodes.push(episode);
        self.steps.push(t);
        self.observations.push(obs);
        self.actions.push(d.action);
        self.raw_actions.push(d.raw);
        self.log_probs.push(d.log_prob);
        self.rewards.push(reward);
        self.values.push(d.value);
        self.dones.push(done);
    }

    pub fn clear(&mut self) {
        *self = Self::new(self.agent);
    }

    /// All per-step arrays have the same length; the estimates are either
    /// absent or aligned too.
    pub fn is_aligned(&self) -> bool {
        let n = self.len();
        let core = [
            self.episodes.len(),
            self.steps.len(),
            self.observations.len(),
            self.actions.len(),
            self.raw_actions.len(),
            self.log_probs.len(),
            self.values.len(),
            self.dones.len(),
        ];
        core.iter().all(|l| *l == n)
            && (self.advantages.is_empty() || self.advantages.len() == n)
            && self.advantages.len() == self.returns.len()
    }

    /// One row per step; vector columns are `;`-joined.
    pub fn write_csv<W: Write>(&self, out: W, header: bool) -> Result<(), EnvError> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        if header {
            w.write_record(TRAJECTORY_CSV_HEADER)?;
        }
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
        for i in 0..self.len() {
            w.write_record([
                self.episodes[i].to_string(),
                self.steps[i].to_string(),
                self.agent.to_string(),
                self.rewards[i].to_string(),
                self.values[i].to_string(),
                self.log_probs[i].to_string(),
                self.dones[i].to_string(),
                join(&self.actions[i]),
                join(&self.observations[i]),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Everything that happened in one round, per agent in `agents` order.
#[derive(Debug, Clone)]
pub struct Round {
    pub observations: Vec<Vec<f64>>,
    pub decisions: Vec<Decision>,
    pub outcome: StepOutcome,
}

impl Round {
    /// Scaled reward of the agent at position `k` of the `agents` slice.
    pub fn reward(&self, agent: AgentId) -> f64 {
        match agent {
            AgentId::Leader(r) => self.outcome.leader_rewards[r],
            AgentId::Follower(v) => self.outcome.follower_rewards[v],
        }
    }
}

fn check_roster(env: &MarketEnv, agents: &[&dyn Agent]) -> Result<(), EnvError> {
    let (r, v) = (env.num_rsus(), env.num_avs());
    let expected: Vec<AgentId> = (0..r)
        .map(AgentId::Leader)
        .chain((0..v).map(AgentId::Follower))
        .collect();
    let found: Vec<AgentId> = agents.iter().map(|a| a.id()).collect();
    if found != expected {
        return Err(EnvError::Config(format!(
            "agents must be ordered leaders then followers ({} + {}), got {found:?}",
            r, v
        )));
    }
    Ok(())
}

fn decide(
    agent: &dyn Agent,
    obs: &Observation,
    rng: &mut ChaCha8Rng,
    explore: bool,
    t: usize,
) -> Result<(Vec<f64>, Decision), EnvError> {
    let encoded = obs.encode();
    let d = agent
        .decide(obs, &encoded, rng, explore)
        .map_err(|reason| EnvError::Agent {
            agent: agent.id(),
            reason,
        })?;
    if d.action.iter().chain(&d.raw).any(|x| !x.is_finite()) || !d.log_prob.is_finite() {
        return Err(EnvError::NonFinite { agent: agent.id(), t });
    }
    Ok((encoded, d))
}

/// Plays one round: leaders price from `leader_obs`, followers respond to the posted prices.
pub fn play_round(
    env: &mut MarketEnv,
    agents: &[&dyn Agent],
    leader_obs: &[Observation],
    explore: bool,
) -> Result<Round, EnvError> {
    check_roster(env, agents)?;
    let (r_n, v_n) = (env.num_rsus(), env.num_avs());
    let t = env.t();
    let mut observations = Vec::with_capacity(r_n + v_n);
    let mut decisions = Vec::with_capacity(r_n + v_n);
    let mut prices = Vec::with_capacity(r_n);
    for (agent, obs) in agents[..r_n].iter().zip(leader_obs) {
        let (enc, d) = decide(*agent, obs, env.rng(), explore, t)?;
        prices.push(d.action[0]);
        observations.push(enc);
        decisions.push(d);
    }
    let follower_obs = env.post_prices(&PriceVector(prices))?;
    let mut b = BandwidthMatrix::zeros(r_n, v_n);
    for (v, (agent, obs)) in agents[r_n..].iter().zip(&follower_obs).enumerate() {
        let (enc, d) = decide(*agent, obs, env.rng(), explore, t)?;
        if d.action.len() != r_n {
            return Err(EnvError::Dimension {
                what: "follower action",
                expected: r_n,
                found: d.action.len(),
            });
        }
        b.set_column(v, &d.action);
        observations.push(enc);
        decisions.push(d);
    }
    let outcome = env.submit_bandwidths(&b)?;
    Ok(Round {
        observations,
        decisions,
        outcome,
    })
}

/// Plays `episodes` full episodes; episode `k` is seeded `rng_seed + k`.
/// Returns one buffer per agent, in `agents` order.
pub fn rollout(
    env: &mut MarketEnv,
    agents: &[&dyn Agent],
    episodes: usize,
    explore: bool,
) -> Result<Vec<TrajectoryBuffer>, EnvError> {
    check_roster(env, agents)?;
    let mut buffers: Vec<TrajectoryBuffer> = agents.iter().map(|a| TrajectoryBuffer::new(a.id())).collect();
    for k in 0..episodes as u64 {
        let mut obs = env.reset_episode(k);
        loop {
            let t = env.t();
            let round = play_round(env, agents, &obs, explore)?;
            let done = round.outcome.done;
            for (i, (enc, d)) in round.observations.iter().zip(&round.decisions).enumerate() {
                let reward = round.reward(agents[i].id());
                buffers[i].push(k, t, enc.clone(), d.clone(), reward, done);
            }
            obs = round.outcome.next_observations;
            if done {
                break;
            }
        }
    }
    Ok(buffers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::game::InstanceSampler;
    use rand::Rng;

    /// Uniform actions inside the bounds.
    struct Uniform {
        id: AgentId,
        lo: f64,
        hi: f64,
        dim: usize,
    }

    impl Agent for Uniform {
        fn id(&self) -> AgentId {
            self.id
        }

        fn decide(&self, _: &Observation, _: &[f64], rng: &mut ChaCha8Rng, explore: bool) -> Result<Decision, String> {
            let action = (0..self.dim)
                .map(|_| {
                    if explore {
                        rng.random_range(self.lo..=self.hi)
                    } else {
                        0.5 * (self.lo + self.hi)
                    }
                })
                .collect::<Vec<_>>();
            Ok(Decision {
                raw: action.clone(),
                action,
                log_prob: 0.0,
                value: 0.0,
            })
        }
    }

    fn setup() -> (MarketEnv, Vec<Uniform>) {
        let g = InstanceSampler::default().with_size(2, 3).default_instance();
        let cfg = EnvConfig {
            history_window: 2,
            episode_length: 4,
            ..EnvConfig::default()
        };
        let agents = (0..2)
            .map(|r| Uniform {
                id: AgentId::Leader(r),
                lo: 0.4,
                hi: 1.0,
                dim: 1,
            })
            .chain((0..3).map(|v| Uniform {
                id: AgentId::Follower(v),
                lo: 0.0,
                hi: 10.0,
                dim: 2,
            }))
            .collect();
        (MarketEnv::new(cfg, g).unwrap(), agents)
    }

    #[test]
    fn rollout_is_reproducible_and_sized() {
        let (mut env, agents) = setup();
        let refs: Vec<&dyn Agent> = agents.iter().map(|a| a as &dyn Agent).collect();
        let a = rollout(&mut env, &refs, 3, true).unwrap();
        let b = rollout(&mut env, &refs, 3, true).unwrap();
        assert_eq!(a, b);
        for buf in &a {
            assert_eq!(buf.len(), 12);
            assert!(buf.is_aligned());
        }
        for buf in &a[..2] {
            assert!(buf.rewards.iter().all(|r| *r >= 0.0));
        }
        let mut x = Vec::new();
        let mut y = Vec::new();
        a[0].write_csv(&mut x, true).unwrap();
        b[0].write_csv(&mut y, true).unwrap();
        assert_eq!(x, y);
        let text = String::from_utf8(x).unwrap();
        assert_eq!(text.lines().count(), 13);
        assert!(text.starts_with("episode,t,agent,reward"));
    }

    #[test]
    fn roster_order_is_checked() {
        let (mut env, agents) = setup();
        let mut refs: Vec<&dyn Agent> = agents.iter().map(|a| a as &dyn Agent).collect();
        refs.swap(0, 2);
        assert!(rollout(&mut env, &refs, 1, false).is_err());
    }
}
