use serde::{Deserialize, Serialize};

use super::GameError;

/// Radio and signal-processing constants shared by every RSU/AV link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Transmit power of the AV, watts.
    pub transmit_power: f64,
    /// Unit channel power gain.
    pub unit_gain: f64,
    /// Path-loss exponent applied to the RSU/AV distance.
    pub pathloss_exponent: f64,
    /// Additive white Gaussian noise power, watts.
    pub noise_power: f64,
    /// Signal processing speed of the RSU, operations per second.
    pub signal_speed: f64,
    /// Number of channel-estimation iterations.
    pub estimation_iterations: u32,
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), GameError> {
        let fields = [
            ("transmit_power", self.transmit_power),
            ("unit_gain", self.unit_gain),
            ("pathloss_exponent", self.pathloss_exponent),
            ("noise_power", self.noise_power),
            ("signal_speed", self.signal_speed),
        ];
        for (name, value) in fields {
            positive(name, value)?;
        }
        if self.estimation_iterations == 0 {
            return Err(GameError::invalid("estimation_iterations", "must be at least 1"));
        }
        Ok(())
    }

    /// Received signal-to-noise ratio at `distance` meters.
    pub fn snr(&self, distance: f64) -> f64 {
        self.transmit_power * self.unit_gain * distance.powf(-self.pathloss_exponent)
            / self.noise_power
    }
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            transmit_power: 0.5,
            unit_gain: 1e-3,
            pathloss_exponent: 2.0,
            noise_power: 1e-9,
            signal_speed: 100.0,
            estimation_iterations: 3,
        }
    }
}

/// One AV's transmission job.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub data_size: f64,
    /// Maximum tolerated delay, seconds.
    pub deadline: f64,
    /// Task importance; scales both the pairing weight and the QoS revenue.
    pub importance: f64,
}

impl TaskSpec {
    pub fn new(data_size: f64, deadline: f64, importance: f64) -> Result<Self, GameError> {
        let task = Self {
            data_size,
            deadline,
            importance,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<(), GameError> {
        if !(self.data_size >= 0.0) || !self.data_size.is_finite() {
            return Err(GameError::invalid("data_size", "must be finite and >= 0"));
        }
        positive("deadline", self.deadline)?;
        positive("importance", self.importance)
    }

    /// `e * T_max / alpha`: the demand offset in the follower best response.
    pub fn demand_offset(&self) -> f64 {
        std::f64::consts::E * self.deadline / self.importance
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RsuConfig {
    /// Base cost per bandwidth unit; also the lowest admissible price.
    pub base_cost: f64,
    pub max_price: f64,
}

impl RsuConfig {
    pub fn new(base_cost: f64, max_price: f64) -> Result<Self, GameError> {
        let rsu = Self {
            base_cost,
            max_price,
        };
        rsu.validate()?;
        Ok(rsu)
    }

    pub fn validate(&self) -> Result<(), GameError> {
        positive("base_cost", self.base_cost)?;
        positive("max_price", self.max_price)?;
        if self.base_cost >= self.max_price {
            return Err(GameError::invalid("base_cost", "must be below max_price"));
        }
        Ok(())
    }

    pub fn clamp_price(&self, price: f64) -> f64 {
        price.clamp(self.base_cost, self.max_price)
    }
}

/// Full market state: every RSU, every AV task, link geometry and bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameInstance {
    pub rsus: Vec<RsuConfig>,
    pub avs: Vec<TaskSpec>,
    pub channel: ChannelParams,
    /// Distances in meters, indexed `[rsu][av]`.
    pub distances: Vec<Vec<f64>>,
    /// Marginal effect of perceived service quality on AV revenue.
    pub marginal_beta: f64,
    /// Upper bound on any single `b_rv`.
    pub max_bandwidth: f64,
}

impl GameInstance {
    pub fn new(
        rsus: Vec<RsuConfig>,
        avs: Vec<TaskSpec>,
        channel: ChannelParams,
        distances: Vec<Vec<f64>>,
        marginal_beta: f64,
        max_bandwidth: f64,
    ) -> Result<Self, GameError> {
        let g = Self {
            rsus,
            avs,
            channel,
            distances,
            marginal_beta,
            max_bandwidth,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), GameError> {
        if self.rsus.is_empty() || self.avs.is_empty() {
            return Err(GameError::invalid("rsus/avs", "need at least one RSU and one AV"));
        }
        for rsu in &self.rsus {
            rsu.validate()?;
        }
        for av in &self.avs {
            av.validate()?;
        }
        self.channel.validate()?;
        positive("marginal_beta", self.marginal_beta)?;
        positive("max_bandwidth", self.max_bandwidth)?;
        if self.distances.len() != self.rsus.len()
            || self.distances.iter().any(|row| row.len() != self.avs.len())
        {
            return Err(GameError::Shape {
                what: "distances",
                expected: (self.rsus.len(), self.avs.len()),
                found: (
                    self.distances.len(),
                    self.distances.first().map_or(0, Vec::len),
                ),
            });
        }
        if self
            .distances
            .iter()
            .flatten()
            .any(|d| !(*d > 0.0) || !d.is_finite())
        {
            return Err(GameError::invalid("distances", "all distances must be > 0"));
        }
        Ok(())
    }

    pub fn num_rsus(&self) -> usize {
        self.rsus.len()
    }

    pub fn num_avs(&self) -> usize {
        self.avs.len()
    }

    pub fn distance(&self, rsu: usize, av: usize) -> f64 {
        self.distances[rsu][av]
    }

    /// Prices halfway between each RSU's cost and its cap.
    pub fn midpoint_prices(&self) -> PriceVector {
        PriceVector(
            self.rsus
                .iter()
                .map(|r| 0.5 * (r.base_cost + r.max_price))
                .collect(),
        )
    }

    pub fn clamp_prices(&self, prices: &PriceVector) -> PriceVector {
        PriceVector(
            self.rsus
                .iter()
                .zip(&prices.0)
                .map(|(rsu, p)| rsu.clamp_price(*p))
                .collect(),
        )
    }

    pub fn from_toml(text: &str) -> Result<Self, GameError> {
        let g: Self = toml::from_str(text).map_err(|e| GameError::Config(e.to_string()))?;
        g.validate()?;
        Ok(g)
    }

    pub fn to_toml(&self) -> Result<String, GameError> {
        toml::to_string(self).map_err(|e| GameError::Config(e.to_string()))
    }
}

/// One price per RSU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceVector(pub Vec<f64>);

impl PriceVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// `y_r = 1 / p_r`.
    pub fn reciprocals(&self) -> Vec<f64> {
        self.0.iter().map(|p| 1.0 / p).collect()
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }
}

/// Bandwidth purchased by each AV from each RSU, stored row-major `[rsu][av]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthMatrix {
    rsus: usize,
    avs: usize,
    data: Vec<f64>,
}

impl BandwidthMatrix {
    pub fn zeros(rsus: usize, avs: usize) -> Self {
        Self {
            rsus,
            avs,
            data: vec![0.0; rsus * avs],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, GameError> {
        let rsus = rows.len();
        let avs = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != avs) {
            return Err(GameError::invalid("bandwidth rows", "ragged rows"));
        }
        Ok(Self {
            rsus,
            avs,
            data: rows.concat(),
        })
    }

    pub fn from_flat(rsus: usize, avs: usize, data: Vec<f64>) -> Result<Self, GameError> {
        if data.len() != rsus * avs {
            return Err(GameError::Shape {
                what: "bandwidth",
                expected: (rsus, avs),
                found: (data.len(), 1),
            });
        }
        Ok(Self { rsus, avs, data })
    }

    pub fn rsus(&self) -> usize {
        self.rsus
    }

    pub fn avs(&self) -> usize {
        self.avs
    }

    pub fn get(&self, rsu: usize, av: usize) -> f64 {
        self.data[rsu * self.avs + av]
    }

    pub fn set(&mut self, rsu: usize, av: usize, value: f64) {
        self.data[rsu * self.avs + av] = value;
    }

    /// The bandwidth AV `av` buys from every RSU.
    pub fn column(&self, av: usize) -> Vec<f64> {
        (0..self.rsus).map(|r| self.get(r, av)).collect()
    }

    pub fn set_column(&mut self, av: usize, values: &[f64]) {
        for (r, v) in values.iter().enumerate() {
            self.set(r, av, *v);
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn positive(name: &'static str, value: f64) -> Result<(), GameError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(GameError::invalid(name, "must be finite and > 0"))
    }
}
