use std::f64::consts::E;

use super::{BandwidthMatrix, GameError, GameInstance, PriceVector, TaskSpec};

/// Price-inverse pairing weight `theta_rv = alpha_v * (1/p_r) / sum_l (1/p_l)`.
pub fn pairing_weight(rsu: usize, av: &TaskSpec, prices: &PriceVector) -> Result<f64, GameError> {
    if prices.0.iter().any(|p| !(*p > 0.0)) {
        return Err(GameError::invalid("prices", "pairing needs strictly positive prices"));
    }
    let total: f64 = prices.0.iter().map(|p| 1.0 / p).sum();
    Ok(av.importance * (1.0 / prices.0[rsu]) / total)
}

/// Pairing weights of one AV against every RSU; they sum to the AV's importance.
pub fn pairing_weights(av: &TaskSpec, prices: &PriceVector) -> Result<Vec<f64>, GameError> {
    (0..prices.len())
        .map(|r| pairing_weight(r, av, prices))
        .collect()
}

/// Utility of AV `av`.
///
/// Each RSU contributes `theta_rv * beta * (ln(e + alpha_v b_rv / T_v) - p_r b_rv)`.
/// The pairing weight multiplies the cost as well as the revenue, which is the
/// form whose stationarity condition is `b_rv = 1/p_r - e T_v / alpha_v`.
pub fn follower_utility(
    av: usize,
    bandwidths: &BandwidthMatrix,
    prices: &PriceVector,
    g: &GameInstance,
) -> f64 {
    let task = &g.avs[av];
    let inv_total: f64 = prices.0.iter().map(|p| 1.0 / p).sum();
    (0..g.num_rsus())
        .map(|r| {
            let theta = task.importance / prices.0[r] / inv_total;
            let b = bandwidths.get(r, av);
            theta * g.marginal_beta * follower_link_value(task, b, prices.0[r])
        })
        .sum()
}

/// `ln(e + alpha b / T) - p b`, the unweighted per-link follower payoff.
pub fn follower_link_value(task: &TaskSpec, bandwidth: f64, price: f64) -> f64 {
    (E + task.importance * bandwidth / task.deadline).ln() - price * bandwidth
}

/// Analytic `dU_v / db_rv`.
pub fn follower_marginal(
    rsu: usize,
    av: usize,
    bandwidths: &BandwidthMatrix,
    prices: &PriceVector,
    g: &GameInstance,
) -> f64 {
    let task = &g.avs[av];
    let theta = pairing_weight(rsu, task, prices).unwrap_or(0.0);
    let slope = task.importance / task.deadline;
    let b = bandwidths.get(rsu, av);
    theta * g.marginal_beta * (slope / (E + slope * b) - prices.0[rsu])
}

/// Analytic `d^2 U_v / db_rv^2`; negative everywhere.
pub fn follower_curvature(
    rsu: usize,
    av: usize,
    bandwidths: &BandwidthMatrix,
    prices: &PriceVector,
    g: &GameInstance,
) -> f64 {
    let task = &g.avs[av];
    let theta = pairing_weight(rsu, task, prices).unwrap_or(0.0);
    let slope = task.importance / task.deadline;
    let denom = E + slope * bandwidths.get(rsu, av);
    -theta * g.marginal_beta * slope * slope / (denom * denom)
}

/// Utility of RSU `rsu`: `sum_v theta_rv (p_r - c_r) b_rv`.
pub fn leader_utility(
    rsu: usize,
    bandwidths: &BandwidthMatrix,
    prices: &PriceVector,
    g: &GameInstance,
) -> f64 {
    let inv_total: f64 = prices.0.iter().map(|p| 1.0 / p).sum();
    let price = prices.0[rsu];
    let margin = price - g.rsus[rsu].base_cost;
    (0..g.num_avs())
        .map(|v| {
            let theta = g.avs[v].importance / price / inv_total;
            theta * margin * bandwidths.get(rsu, v)
        })
        .sum()
}

/// Leader utility with every follower's unclamped best response
/// `b_rv = y - Z_v` substituted, as a function of the leader's reciprocal
/// price `y` and the competitors' reciprocal-price sum `w`.
pub fn leader_substituted_utility(rsu: usize, y: f64, w: f64, g: &GameInstance) -> f64 {
    let cost = g.rsus[rsu].base_cost;
    g.avs
        .iter()
        .map(|task| {
            let share = task.importance * y / (y + w);
            share * (y - task.demand_offset()) * (1.0 / y - cost)
        })
        .sum()
}

pub fn all_leader_utilities(
    bandwidths: &BandwidthMatrix,
    prices: &PriceVector,
    g: &GameInstance,
) -> Vec<f64> {
    (0..g.num_rsus())
        .map(|r| leader_utility(r, bandwidths, prices, g))
        .collect()
}

pub fn all_follower_utilities(
    bandwidths: &BandwidthMatrix,
    prices: &PriceVector,
    g: &GameInstance,
) -> Vec<f64> {
    (0..g.num_avs())
        .map(|v| follower_utility(v, bandwidths, prices, g))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{ChannelParams, RsuConfig};
    use approx::assert_relative_eq;

    fn single(alpha: f64, deadline: f64, cost: f64, beta: f64) -> GameInstance {
        GameInstance::new(
            vec![RsuConfig::new(cost, 10.0).unwrap()],
            vec![TaskSpec::new(1.0, deadline, alpha).unwrap()],
            ChannelParams::default(),
            vec![vec![100.0]],
            beta,
            100.0,
        )
        .unwrap()
    }

    #[test]
    fn pairing_examples() {
        let av = TaskSpec::new(1.0, 1.0, 1.0).unwrap();
        let prices = PriceVector(vec![1.0, 2.0]);
        assert_relative_eq!(pairing_weight(0, &av, &prices).unwrap(), 2.0 / 3.0, max_relative = 1e-12);

        let av3 = TaskSpec::new(1.0, 1.0, 3.0).unwrap();
        let equal = PriceVector(vec![0.7; 4]);
        for r in 0..4 {
            assert_relative_eq!(pairing_weight(r, &av3, &equal).unwrap(), 0.75, max_relative = 1e-12);
        }
        let one = PriceVector(vec![0.3]);
        assert_relative_eq!(pairing_weight(0, &av3, &one).unwrap(), 3.0, max_relative = 1e-12);

        assert!(pairing_weight(0, &av, &PriceVector(vec![1.0, 0.0])).is_err());
    }

    #[test]
    fn follower_utility_examples() {
        let g = single(1.0, 1.0, 0.5, 1.0);
        let prices = PriceVector(vec![1.0]);
        let zero = BandwidthMatrix::zeros(1, 1);
        assert_relative_eq!(follower_utility(0, &zero, &prices, &g), 1.0, max_relative = 1e-12);

        let mut b = BandwidthMatrix::zeros(1, 1);
        b.set(0, 0, E * E - E);
        let expected = 2.0 - E * E + E;
        assert_relative_eq!(follower_utility(0, &b, &prices, &g), expected, max_relative = 1e-12);

        // Past the optimum, raising spend keeps lowering utility.
        let mut prev = f64::INFINITY;
        for step in 1..20 {
            b.set(0, 0, 2.0 + step as f64);
            let u = follower_utility(0, &b, &prices, &g);
            assert!(u < prev);
            prev = u;
        }
    }

    #[test]
    fn leader_utility_examples() {
        let g = single(1.0, 1.0, 1.0, 1.0);
        let mut b = BandwidthMatrix::zeros(1, 1);
        b.set(0, 0, 2.0);
        assert_eq!(leader_utility(0, &b, &PriceVector(vec![1.0]), &g), 0.0);
        assert_relative_eq!(leader_utility(0, &b, &PriceVector(vec![3.0]), &g), 4.0, max_relative = 1e-12);
        let zero = BandwidthMatrix::zeros(1, 1);
        assert_eq!(leader_utility(0, &zero, &PriceVector(vec![3.0]), &g), 0.0);
    }

    #[test]
    fn substituted_utility_matches_direct_evaluation() {
        let g = single(8.0, 0.5, 0.3, 2.0);
        let y = 2.0;
        let b = y - g.avs[0].demand_offset();
        let mut bw = BandwidthMatrix::zeros(1, 1);
        bw.set(0, 0, b);
        let direct = leader_utility(0, &bw, &PriceVector(vec![1.0 / y]), &g);
        assert_relative_eq!(leader_substituted_utility(0, y, 0.0, &g), direct, max_relative = 1e-12);
    }
}
