//! Bandwidth-pricing market between roadside units (leaders) and vehicles
//! (followers): latency model, utilities, closed-form best responses and the
//! best-response-dynamics equilibrium solver.

mod certify;
mod equilibrium;
mod latency;
mod response;
pub mod sampler;
mod types;
mod utility;

pub use certify::{certify_standard_function, CertificateReport, PropertyTally, ResponseSample};
pub use equilibrium::{
    deviation_scan, solve_equilibrium, solve_equilibrium_from, DeviationScan, EquilibriumResult,
    SolverOptions,
};
pub use latency::{channel_latency, latency_feasibility, total_latency, transfer_latency, transfer_rate};
pub use response::{
    aggregated_leader_root, clamped_root_price, follower_best_response, follower_best_responses,
    follower_demand, leader_best_response, leader_response_utility, summed_per_av_root,
};
pub use sampler::InstanceSampler;
pub use types::{BandwidthMatrix, ChannelParams, GameInstance, PriceVector, RsuConfig, TaskSpec};
pub use utility::{
    all_follower_utilities, all_leader_utilities, follower_curvature, follower_link_value,
    follower_marginal, follower_utility, leader_substituted_utility, leader_utility,
    pairing_weight, pairing_weights,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GameError {
    #[error("invalid {field}: {reason}")]
    Invalid {
        field: &'static str,
        reason: &'static str,
    },
    #[error("{what} has shape {found:?}, expected {expected:?}")]
    Shape {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("zero bandwidth gives unbounded transfer latency")]
    InfiniteLatency,
    #[error("best-response dynamics did not converge in {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("config: {0}")]
    Config(String),
}

impl GameError {
    pub(crate) fn invalid(field: &'static str, reason: &'static str) -> Self {
        Self::Invalid { field, reason }
    }
}
