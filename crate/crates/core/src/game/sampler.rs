use std::f64::consts::E;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ChannelParams, GameInstance, RsuConfig, TaskSpec};

/// Random instance generator. Every range is `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InstanceSampler {
    pub num_rsus: usize,
    pub num_avs: usize,
    pub base_cost: (f64, f64),
    /// Cap as a multiple of the base cost.
    pub max_price_ratio: (f64, f64),
    pub importance: (f64, f64),
    pub deadline: (f64, f64),
    pub data_size: (f64, f64),
    pub distance: (f64, f64),
    pub marginal_beta: f64,
    pub max_bandwidth: f64,
    /// Shrink deadlines so `alpha_v >= e * p_max * T_v` for every AV and RSU,
    /// i.e. followers never leave the market at any admissible price.
    pub interior_followers: bool,
    pub channel: ChannelParams,
}

impl Default for InstanceSampler {
    fn default() -> Self {
        Self {
            num_rsus: 3,
            num_avs: 5,
            base_cost: (0.3, 0.5),
            max_price_ratio: (2.0, 3.0),
            importance: (4.0, 8.0),
            deadline: (0.5, 1.0),
            data_size: (0.2, 0.6),
            distance: (50.0, 300.0),
            marginal_beta: 3.0,
            max_bandwidth: 10.0,
            interior_followers: true,
            channel: ChannelParams::default(),
        }
    }
}

impl InstanceSampler {
    pub fn with_size(mut self, num_rsus: usize, num_avs: usize) -> Self {
        self.num_rsus = num_rsus;
        self.num_avs = num_avs;
        self
    }

    /// The fixed reference market: identical RSUs (`c = 0.4`, `p_max = 1`),
    /// importances and deadlines spread over `(4, 8]` and `[0.5, 1)`.
    /// AV lists are nested: the first `n` AVs of a larger instance equal the
    /// `n`-AV instance, which keeps population sweeps comparable.
    pub fn default_instance(&self) -> GameInstance {
        let rsus = vec![RsuConfig::new(0.4, 1.0).expect("valid"); self.num_rsus];
        let avs: Vec<TaskSpec> = (0..self.num_avs)
            .map(|v| {
                let u = reference_point(v);
                let deadline = 0.5 + 0.5 * reference_point(2 * v + 1);
                TaskSpec::new(0.2 + 0.4 * u, deadline, 4.0 + 4.0 * (1.0 - u)).expect("valid")
            })
            .collect();
        let distances = (0..self.num_rsus)
            .map(|r| {
                (0..self.num_avs)
                    .map(|v| 50.0 + 250.0 * reference_point(r * 7 + v * 3 + 1))
                    .collect()
            })
            .collect();
        GameInstance::new(
            rsus,
            avs,
            self.channel,
            distances,
            self.marginal_beta,
            self.max_bandwidth,
        )
        .expect("reference instance is valid")
    }

    pub fn sample_seeded(&self, seed: u64) -> GameInstance {
        self.sample(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> GameInstance {
        let rsus: Vec<RsuConfig> = (0..self.num_rsus)
            .map(|_| {
                let c = draw(rng, self.base_cost);
                let ratio = draw(rng, self.max_price_ratio).max(1.0 + 1e-6);
                RsuConfig::new(c, c * ratio).expect("sampled RSU is valid")
            })
            .collect();
        let p_cap = rsus.iter().map(|r| r.max_price).fold(0.0, f64::max);
        let avs = (0..self.num_avs)
            .map(|_| {
                let alpha = draw(rng, self.importance);
                let mut deadline = draw(rng, self.deadline);
                if self.interior_followers {
                    deadline = deadline.min(0.95 * alpha / (E * p_cap));
                }
                TaskSpec::new(draw(rng, self.data_size), deadline, alpha).expect("sampled task is valid")
            })
            .collect();
        let distances = (0..self.num_rsus)
            .map(|_| (0..self.num_avs).map(|_| draw(rng, self.distance)).collect())
            .collect();
        GameInstance::new(
            rsus,
            avs,
            self.channel,
            distances,
            self.marginal_beta,
            self.max_bandwidth,
        )
        .expect("sampled instance is valid")
    }
}

fn draw<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Deterministic low-discrepancy point in `[0, 1)` (golden-ratio sequence).
fn reference_point(i: usize) -> f64 {
    (i as f64 * 0.618_033_988_749_895).fract()
}
