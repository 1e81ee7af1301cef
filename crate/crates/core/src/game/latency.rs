use super::{BandwidthMatrix, ChannelParams, GameError, GameInstance, TaskSpec};

/// Channel-estimation latency `k * D / f_signal`.
pub fn channel_latency(task: &TaskSpec, ch: &ChannelParams) -> f64 {
    f64::from(ch.estimation_iterations) * task.data_size / ch.signal_speed
}

/// Shannon-form transfer rate `b * log2(1 + rho h d^-eps / sigma^2)`.
pub fn transfer_rate(bandwidth: f64, distance: f64, ch: &ChannelParams) -> Result<f64, GameError> {
    if !(distance > 0.0) {
        return Err(GameError::invalid("distance", "must be > 0"));
    }
    if bandwidth < 0.0 {
        return Err(GameError::invalid("bandwidth", "must be >= 0"));
    }
    if bandwidth == 0.0 {
        return Ok(0.0);
    }
    Ok(bandwidth * (1.0 + ch.snr(distance)).log2())
}

/// Transfer plus channel-estimation latency of one task over one link.
pub fn total_latency(
    task: &TaskSpec,
    bandwidth: f64,
    distance: f64,
    ch: &ChannelParams,
) -> Result<f64, GameError> {
    transfer_latency(task, bandwidth, distance, ch).map(|t| t + channel_latency(task, ch))
}

/// `D / r_rv`; zero bandwidth yields [`GameError::InfiniteLatency`].
pub fn transfer_latency(
    task: &TaskSpec,
    bandwidth: f64,
    distance: f64,
    ch: &ChannelParams,
) -> Result<f64, GameError> {
    if task.data_size == 0.0 && bandwidth > 0.0 {
        return Ok(0.0);
    }
    let rate = transfer_rate(bandwidth, distance, ch)?;
    if rate == 0.0 {
        return Err(GameError::InfiniteLatency);
    }
    Ok(task.data_size / rate)
}

/// Per-AV check of the follower latency constraint: the summed transfer
/// latency over every RSU the AV buys from must not exceed its deadline.
/// AVs that buy nothing are infeasible.
pub fn latency_feasibility(g: &GameInstance, bandwidths: &BandwidthMatrix) -> Vec<bool> {
    (0..g.num_avs())
        .map(|v| {
            let task = &g.avs[v];
            let mut bought = false;
            let mut latency = 0.0;
            for r in 0..g.num_rsus() {
                let b = bandwidths.get(r, v);
                if b > 0.0 {
                    bought = true;
                    match transfer_latency(task, b, g.distance(r, v), &g.channel) {
                        Ok(t) => latency += t,
                        Err(_) => return false,
                    }
                }
            }
            bought && latency <= task.deadline
        })
        .collect()
}
