//! Closed-form best responses of both populations.
//!
//! Leaders are analysed in reciprocal-price space `y_r = 1/p_r`. Against the
//! followers' best responses, RSU `r` earns
//!
//! ```text
//! U(y) = (1 - c y) / (y + W) * sum_v alpha_v * clamp(y - Z_v, 0, b_max)
//! ```
//!
//! with `W` the competitors' reciprocal-price sum and `Z_v = e T_v / alpha_v`.
//! On every interval where the set of interior / saturated followers is fixed
//! the stationary point solves one quadratic, so the exact maximiser is found
//! by checking each interval's root plus the interval endpoints.

use super::{GameInstance, PriceVector};

/// AV `av`'s optimal purchase from every RSU.
pub fn follower_best_response(av: usize, prices: &PriceVector, g: &GameInstance) -> Vec<f64> {
    let task = &g.avs[av];
    prices
        .0
        .iter()
        .map(|&p| follower_demand(p, task.importance, task.deadline, g.max_bandwidth))
        .collect()
}

/// `1/p - e T / alpha`, clamped to `[0, b_max]`; zero when `alpha < e p T`.
pub fn follower_demand(price: f64, importance: f64, deadline: f64, max_bandwidth: f64) -> f64 {
    let threshold = std::f64::consts::E * price * deadline;
    if importance < threshold {
        return 0.0;
    }
    let raw = 1.0 / price - std::f64::consts::E * deadline / importance;
    raw.clamp(0.0, max_bandwidth)
}

/// Best response of every follower at once.
pub fn follower_best_responses(prices: &PriceVector, g: &GameInstance) -> super::BandwidthMatrix {
    let mut b = super::BandwidthMatrix::zeros(g.num_rsus(), g.num_avs());
    for v in 0..g.num_avs() {
        b.set_column(v, &follower_best_response(v, prices, g));
    }
    b
}

/// Positive root of the aggregated leader first-order condition
///
/// `sum_v alpha_v [-c y^2 - 2 c y W + Z_v (c W + 1) + W] = 0`,
///
/// i.e. `y = sqrt(c^2 W^2 + c (Zbar + (1 + Zbar c) W)) / c - W` with `Zbar` the
/// importance-weighted mean offset. Evaluated in rationalised form so large `W`
/// does not cancel. Returns `None` on the degenerate branch (no positive root).
pub fn aggregated_leader_root(cost: f64, w: f64, importances: &[f64], offsets: &[f64]) -> Option<f64> {
    let total: f64 = importances.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let weighted: f64 = importances.iter().zip(offsets).map(|(a, z)| a * z).sum();
    quadratic_root(cost, w, total, weighted)
}

/// Per-AV root summed over AVs, as the closed form is sometimes printed. It
/// coincides with [`aggregated_leader_root`] only for a single AV; kept for
/// comparison reports.
pub fn summed_per_av_root(cost: f64, w: f64, offsets: &[f64]) -> f64 {
    offsets
        .iter()
        .map(|&z| quadratic_root(cost, w, 1.0, z).unwrap_or(0.0))
        .sum()
}

/// Positive root of `c A y^2 + 2 c A W y - (A W + K (c W + 1)) = 0`.
fn quadratic_root(cost: f64, w: f64, a: f64, k: f64) -> Option<f64> {
    if a <= 0.0 {
        return None;
    }
    // Divide through by A: c y^2 + 2 c W y - q = 0 with q = W + (K/A)(cW + 1).
    let q = w + (k / a) * (cost * w + 1.0);
    if q <= 0.0 {
        return None;
    }
    let inner = cost * cost * w * w + cost * q;
    // sqrt(c^2 W^2 + c q)/c - W == q / (sqrt(c^2 W^2 + c q) + c W)
    Some(q / (inner.sqrt() + cost * w))
}

/// The aggregated root mapped back to a price and clamped to `[c_r, p_max]`;
/// `p_max` on the degenerate branch. Equals [`leader_best_response`] whenever
/// every follower stays interior over the admissible price range.
pub fn clamped_root_price(rsu: usize, others_y: &[f64], g: &GameInstance) -> f64 {
    let w: f64 = others_y.iter().sum();
    let alphas: Vec<f64> = g.avs.iter().map(|t| t.importance).collect();
    let offsets: Vec<f64> = g.avs.iter().map(|t| t.demand_offset()).collect();
    let cfg = &g.rsus[rsu];
    match aggregated_leader_root(cfg.base_cost, w, &alphas, &offsets) {
        Some(y) => cfg.clamp_price(1.0 / y),
        None => cfg.max_price,
    }
}

/// Leader payoff against clamped follower best responses.
pub fn leader_response_utility(rsu: usize, y: f64, w: f64, g: &GameInstance) -> f64 {
    let cost = g.rsus[rsu].base_cost;
    let demand: f64 = g
        .avs
        .iter()
        .map(|t| t.importance * (y - t.demand_offset()).clamp(0.0, g.max_bandwidth))
        .sum();
    (1.0 - cost * y) / (y + w) * demand
}

/// Price RSU `rsu` should post given the competitors' reciprocal prices.
pub fn leader_best_response(rsu: usize, others_y: &[f64], g: &GameInstance) -> f64 {
    let w: f64 = others_y.iter().sum();
    let cfg = &g.rsus[rsu];
    let (lo, hi) = (1.0 / cfg.max_price, 1.0 / cfg.base_cost);
    let y = best_reciprocal_price(rsu, w, g, lo, hi);
    match y {
        Some(y) => cfg.clamp_price(1.0 / y),
        None => cfg.max_price,
    }
}

/// Maximiser of [`leader_response_utility`] over `y in [lo, hi]`, or `None`
/// when no admissible price sells anything.
fn best_reciprocal_price(rsu: usize, w: f64, g: &GameInstance, lo: f64, hi: f64) -> Option<f64> {
    let cost = g.rsus[rsu].base_cost;
    let mut breaks = vec![lo, hi];
    for t in &g.avs {
        let z = t.demand_offset();
        for point in [z, z + g.max_bandwidth] {
            if point > lo && point < hi {
                breaks.push(point);
            }
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let mut candidates = Vec::with_capacity(2 * breaks.len());
    for pair in breaks.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let mid = 0.5 * (a + b);
        let mut interior = 0.0;
        let mut offset = 0.0;
        for t in &g.avs {
            let z = t.demand_offset();
            if mid > z + g.max_bandwidth {
                offset -= t.importance * g.max_bandwidth;
            } else if mid > z {
                interior += t.importance;
                offset += t.importance * z;
            }
        }
        if let Some(root) = quadratic_root(cost, w, interior, offset) {
            if root > a && root < b {
                candidates.push(root);
            }
        }
    }
    // Interior roots first so exact ties resolve toward them.
    candidates.extend(breaks.iter().copied());

    let mut best: Option<(f64, f64)> = None;
    for y in candidates {
        let u = leader_response_utility(rsu, y, w, g);
        if u > 0.0 && best.is_none_or(|(_, bu)| u > bu) {
            best = Some((y, u));
        }
    }
    best.map(|(y, _)| y)
}
