use std::fmt;

use serde::{Deserialize, Serialize};

use super::EnvError;
use crate::game::{BandwidthMatrix, PriceVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum AgentId {
    Leader(usize),
    Follower(usize),
}

impl AgentId {
    pub fn is_leader(self) -> bool {
        matches!(self, Self::Leader(_))
    }

    pub fn index(self) -> usize {
        match self {
            Self::Leader(i) | Self::Follower(i) => i,
        }
    }

    pub fn kind_str(self) -> &'static str {
        match self {
            Self::Leader(_) => "rsu",
            Self::Follower(_) => "av",
        }
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.kind_str(), self.index())
    }
}

/// What one agent sees: the last `L` rounds oldest first, plus the prices
/// posted this round when the agent is a follower. A follower's own column
/// of every bandwidth matrix is zeroed.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub agent: AgentId,
    pub window: Vec<(BandwidthMatrix, PriceVector)>,
    pub current_prices: Option<PriceVector>,
}

impl Observation {
    pub fn encoded_len(num_rsus: usize, num_avs: usize, window: usize, follower: bool) -> usize {
        window * (num_rsus * num_avs + num_rsus) + if follower { num_rsus } else { 0 }
    }

    /// Flat layout: for each round oldest to newest, the bandwidth matrix
    /// row-major by RSU then the price vector; followers append current prices.
    pub fn encode(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (b, p) in &self.window {
            out.extend_from_slice(b.as_slice());
            out.extend_from_slice(p.as_slice());
        }
        if let Some(p) = &self.current_prices {
            out.extend_from_slice(p.as_slice());
        }
        out
    }

    pub fn decode(
        agent: AgentId,
        data: &[f64],
        num_rsus: usize,
        num_avs: usize,
        window: usize,
    ) -> Result<Self, EnvError> {
        let follower = !agent.is_leader();
        let expected = Self::encoded_len(num_rsus, num_avs, window, follower);
        if data.len() != expected {
            return Err(EnvError::Dimension {
                what: "observation encoding",
                expected,
                found: data.len(),
            });
        }
        let step = num_rsus * num_avs + num_rsus;
        let pairs = (0..window)
            .map(|k| {
                let chunk = &data[k * step..(k + 1) * step];
                let b = BandwidthMatrix::from_flat(num_rsus, num_avs, chunk[..num_rsus * num_avs].to_vec())
                    .expect("chunk has matrix size");
                (b, PriceVector(chunk[num_rsus * num_avs..].to_vec()))
            })
            .collect();
        Ok(Self {
            agent,
            window: pairs,
            current_prices: follower.then(|| PriceVector(data[window * step..].to_vec())),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_roundtrip() {
        let mut b = BandwidthMatrix::zeros(2, 3);
        b.set(1, 2, 4.5);
        b.set(0, 0, 1.0);
        let obs = Observation {
            agent: AgentId::Follower(1),
            window: vec![
                (BandwidthMatrix::zeros(2, 3), PriceVector(vec![0.0, 0.0])),
                (b, PriceVector(vec![0.5, 0.7])),
            ],
            current_prices: Some(PriceVector(vec![0.6, 0.8])),
        };
        let enc = obs.encode();
        assert_eq!(enc.len(), Observation::encoded_len(2, 3, 2, true));
        assert_eq!(enc[8], 1.0);
        assert_eq!(enc[8 + 5], 4.5);
        assert_eq!(&enc[enc.len() - 2..], &[0.6, 0.8]);
        assert_eq!(Observation::decode(AgentId::Follower(1), &enc, 2, 3, 2).unwrap(), obs);
        assert!(Observation::decode(AgentId::Leader(0), &enc, 2, 3, 2).is_err());
    }
}
