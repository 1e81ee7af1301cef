use serde::{Deserialize, Serialize};

use super::latency::latency_feasibility;
use super::response::{follower_best_responses, leader_best_response};
use super::utility::{follower_utility, leader_utility};
use super::{BandwidthMatrix, GameError, GameInstance, PriceVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stop once the largest strategy change in an iteration drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Weight on the new best response in the Jacobi update; 1.0 is undamped.
    pub damping: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 500,
            damping: 1.0,
        }
    }
}

/// Fixed point of best-response dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub prices: PriceVector,
    pub bandwidths: BandwidthMatrix,
    pub iterations: usize,
    pub residual: f64,
    /// Per-AV latency-deadline check, evaluated after the fact.
    pub latency_feasible: Vec<bool>,
}

impl EquilibriumResult {
    pub fn leader_utilities(&self, g: &GameInstance) -> Vec<f64> {
        (0..g.num_rsus())
            .map(|r| leader_utility(r, &self.bandwidths, &self.prices, g))
            .collect()
    }

    pub fn follower_utilities(&self, g: &GameInstance) -> Vec<f64> {
        (0..g.num_avs())
            .map(|v| follower_utility(v, &self.bandwidths, &self.prices, g))
            .collect()
    }

    pub fn to_json(&self) -> Result<String, GameError> {
        serde_json::to_string_pretty(self).map_err(|e| GameError::Config(e.to_string()))
    }

    /// Long-format CSV: `kind,rsu,av,value` with one row per price, per
    /// bandwidth entry, plus solver metadata rows.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), GameError> {
        let io = |e: csv::Error| GameError::Config(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["kind", "rsu", "av", "value"]).map_err(io)?;
        for (r, p) in self.prices.0.iter().enumerate() {
            w.write_record(["price", &r.to_string(), "", &p.to_string()])
                .map_err(io)?;
        }
        for r in 0..self.bandwidths.rsus() {
            for v in 0..self.bandwidths.avs() {
                w.write_record([
                    "bandwidth",
                    &r.to_string(),
                    &v.to_string(),
                    &self.bandwidths.get(r, v).to_string(),
                ])
                .map_err(io)?;
            }
        }
        for (v, ok) in self.latency_feasible.iter().enumerate() {
            let flag = if *ok { "1" } else { "0" };
            w.write_record(["latency_feasible", "", &v.to_string(), flag])
                .map_err(io)?;
        }
        w.write_record(["iterations", "", "", &self.iterations.to_string()])
            .map_err(io)?;
        w.write_record(["residual", "", "", &self.residual.to_string()])
            .map_err(io)?;
        w.flush().map_err(|e| GameError::Config(e.to_string()))
    }
}

/// Best-response dynamics from midpoint prices.
pub fn solve_equilibrium(g: &GameInstance, opts: &SolverOptions) -> Result<EquilibriumResult, GameError> {
    solve_equilibrium_from(g, &g.midpoint_prices(), opts)
}

/// Jacobi best-response iteration: every RSU responds to the current
/// reciprocal prices of the others, then every AV responds to the new prices.
pub fn solve_equilibrium_from(
    g: &GameInstance,
    initial: &PriceVector,
    opts: &SolverOptions,
) -> Result<EquilibriumResult, GameError> {
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(GameError::invalid("solver options", "tol > 0 and max_iter >= 1 required"));
    }
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(GameError::invalid("damping", "must lie in (0, 1]"));
    }
    if initial.len() != g.num_rsus() {
        return Err(GameError::invalid("initial prices", "one price per RSU required"));
    }
    let mut prices = g.clamp_prices(initial);
    let mut bandwidths = follower_best_responses(&prices, g);
    let mut residual = f64::INFINITY;

    for iter in 1..=opts.max_iter {
        let y = prices.reciprocals();
        let total: f64 = y.iter().sum();
        let next: Vec<f64> = (0..g.num_rsus())
            .map(|r| {
                let others: Vec<f64> = y
                    .iter()
                    .enumerate()
                    .filter(|(l, _)| *l != r)
                    .map(|(_, v)| *v)
                    .collect();
                debug_assert!((others.iter().sum::<f64>() - (total - y[r])).abs() < 1e-9);
                let target = leader_best_response(r, &others, g);
                prices.0[r] + opts.damping * (target - prices.0[r])
            })
            .collect();
        let next = PriceVector(next);
        let next_b = follower_best_responses(&next, g);

        let price_change = prices
            .0
            .iter()
            .zip(&next.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        residual = price_change.max(bandwidths.max_abs_diff(&next_b));
        prices = next;
        bandwidths = next_b;

        if residual < opts.tol {
            let latency_feasible = latency_feasibility(g, &bandwidths);
            return Ok(EquilibriumResult {
                prices,
                bandwidths,
                iterations: iter,
                residual,
                latency_feasible,
            });
        }
    }
    Err(GameError::NotConverged {
        iterations: opts.max_iter,
        residual,
    })
}

/// Largest utility gain any single player finds by deviating on a uniform
/// grid. Followers vary one `b_rv` over `[0, b_max]` with the rest fixed;
/// leaders vary their price over `[c_r, p_max]` with followers re-solving
/// their best responses to the deviated prices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationScan {
    pub max_follower_gain: f64,
    pub max_leader_gain: f64,
}

pub fn deviation_scan(g: &GameInstance, eq: &EquilibriumResult, grid: usize) -> DeviationScan {
    let grid = grid.max(2);
    let mut max_follower_gain = f64::NEG_INFINITY;
    for v in 0..g.num_avs() {
        let base = follower_utility(v, &eq.bandwidths, &eq.prices, g);
        let mut trial = eq.bandwidths.clone();
        for r in 0..g.num_rsus() {
            let keep = trial.get(r, v);
            for i in 0..grid {
                let b = g.max_bandwidth * i as f64 / (grid - 1) as f64;
                trial.set(r, v, b);
                let gain = follower_utility(v, &trial, &eq.prices, g) - base;
                max_follower_gain = max_follower_gain.max(gain);
            }
            trial.set(r, v, keep);
        }
    }

    let mut max_leader_gain = f64::NEG_INFINITY;
    for r in 0..g.num_rsus() {
        let base = leader_utility(r, &eq.bandwidths, &eq.prices, g);
        let cfg = &g.rsus[r];
        let mut prices = eq.prices.clone();
        for i in 0..grid {
            let p = cfg.base_cost + (cfg.max_price - cfg.base_cost) * i as f64 / (grid - 1) as f64;
            prices.0[r] = p;
            let response = follower_best_responses(&prices, g);
            let gain = leader_utility(r, &response, &prices, g) - base;
            max_leader_gain = max_leader_gain.max(gain);
        }
    }
    DeviationScan {
        max_follower_gain,
        max_leader_gain,
    }
}
