//! Randomised check that the leader response map is a standard function:
//! positive, monotone in the competitors' reciprocal-price sum, and scalable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::response::aggregated_leader_root;
use super::GameInstance;

/// One sampled response-map configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSample {
    pub cost: f64,
    pub importances: Vec<f64>,
    pub offsets: Vec<f64>,
    /// Competitors' reciprocal prices.
    pub others_y: Vec<f64>,
}

impl ResponseSample {
    fn response(&self, scale: f64, shift: f64) -> Option<f64> {
        let w = scale * self.others_y.iter().sum::<f64>() + shift;
        aggregated_leader_root(self.cost, w, &self.importances, &self.offsets)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PropertyTally {
    pub passed: usize,
    pub failed: usize,
    pub counterexample: Option<ResponseSample>,
}

impl PropertyTally {
    fn record(&mut self, ok: bool, sample: &ResponseSample) {
        if ok {
            self.passed += 1;
        } else {
            self.failed += 1;
            if self.counterexample.is_none() {
                self.counterexample = Some(sample.clone());
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub samples: usize,
    pub positivity: PropertyTally,
    pub monotonicity: PropertyTally,
    pub scalability: PropertyTally,
    /// Samples that fell on the degenerate branch and were skipped.
    pub degenerate: usize,
}

impl CertificateReport {
    pub fn holds(&self) -> bool {
        self.positivity.failed == 0 && self.monotonicity.failed == 0 && self.scalability.failed == 0
    }
}

/// For `samples` random (RSU, competitor profile `Y`, `lambda > 1`) draws on
/// the instance `g`, checks `G(Y) > 0`, `G(W') >= G(W)` for `W' > W`, and
/// `lambda G(Y) > G(lambda Y)` on the leader response map `G`.
pub fn certify_standard_function(g: &GameInstance, samples: usize, seed: u64) -> CertificateReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CertificateReport {
        samples,
        positivity: PropertyTally::default(),
        monotonicity: PropertyTally::default(),
        scalability: PropertyTally::default(),
        degenerate: 0,
    };
    let importances: Vec<f64> = g.avs.iter().map(|t| t.importance).collect();
    let offsets: Vec<f64> = g.avs.iter().map(|t| t.demand_offset()).collect();
    let y_cap = g.rsus.iter().map(|r| 2.0 / r.base_cost).fold(0.0, f64::max);
    for _ in 0..samples {
        let rsu = rng.random_range(0..g.num_rsus());
        let sample = ResponseSample {
            cost: g.rsus[rsu].base_cost,
            importances: importances.clone(),
            offsets: offsets.clone(),
            others_y: (0..g.num_rsus() - 1).map(|_| rng.random_range(0.0..y_cap)).collect(),
        };
        let Some(base) = sample.response(1.0, 0.0) else {
            report.degenerate += 1;
            continue;
        };
        report.positivity.record(base > 0.0 && base.is_finite(), &sample);

        let bump = rng.random_range(1e-3..y_cap);
        let raised = sample.response(1.0, bump).unwrap_or(f64::NAN);
        report.monotonicity.record(raised >= base, &sample);

        let lambda = rng.random_range(1.01..10.0);
        let scaled = sample.response(lambda, 0.0).unwrap_or(f64::NAN);
        report.scalability.record(lambda * base > scaled, &sample);
    }
    report
}
