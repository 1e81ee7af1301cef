use crate::nn::{GaussianHead, PolicyNet};

use super::MarlError;

/// TD errors `d_t = r_t + gamma V(s_{t+1}) - V(s_t)` and GAE advantages over
/// a buffer that may span several episodes. `dones[t]` ends an episode (the
/// successor value is 0); a buffer that stops mid-episode bootstraps its last
/// step with `bootstrap`. Returns `(td_errors, advantages, returns)`.
pub fn compute_td_and_advantage(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
    bootstrap: f64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), MarlError> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(MarlError::Length {
            what: "trajectory arrays",
            expected: n,
            found: values.len().min(dones.len()),
        });
    }
    let mut td = vec![0.0; n];
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let (next_value, carry) = if dones[t] {
            (0.0, 0.0)
        } else if t + 1 < n {
            (values[t + 1], 1.0)
        } else {
            (bootstrap, 0.0)
        };
        td[t] = rewards[t] + gamma * next_value - values[t];
        running = td[t] + gamma * lambda * carry * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((td, adv, returns))
}

/// `min(rho A, clip(rho, 1 - eps, 1 + eps) A)` for one sample.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// Zero mean, unit variance; left centred only when the spread is tiny.
pub fn normalize(xs: &[f64]) -> Vec<f64> {
    if xs.is_empty() {
        return Vec::new();
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    xs.iter()
        .map(|x| if std > 1e-8 { (x - mean) / std } else { x - mean })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct PpoSample<'a> {
    /// Network input (already scaled).
    pub input: &'a [f64],
    /// Pre-squash action sampled at collection time.
    pub raw_action: &'a [f64],
    pub log_prob_old: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorLoss {
    pub loss: f64,
    pub entropy: f64,
    /// Samples dropped because their importance ratio was not finite.
    pub excluded: usize,
    pub clip_fraction: f64,
}

/// Clipped-surrogate loss in minimisation form,
/// `-(1/N) sum min(rho A, clip(rho) A) - entropy_coef * H`,
/// evaluated at `params`. When `grad` is given, `dLoss/dparams` is added to it.
pub fn ppo_actor_loss(
    actor: &PolicyNet,
    head: &GaussianHead,
    params: &[f64],
    samples: &[PpoSample<'_>],
    clip_eps: f64,
    entropy_coef: f64,
    mut grad: Option<&mut [f64]>,
) -> Result<ActorLoss, MarlError> {
    let log_std_at = actor
        .log_std_offset()
        .ok_or_else(|| MarlError::Config("actor has no log-std block".into()))?;
    let dim = actor.spec.output_dim;
    let log_std = &params[log_std_at..log_std_at + dim];
    let mut kept = Vec::with_capacity(samples.len());
    for s in samples {
        let cache = actor.forward_cached(params, s.input)?;
        let lp = head.log_prob(s.raw_action, &cache.output, log_std);
        let ratio = (lp - s.log_prob_old).exp();
        if ratio.is_finite() {
            kept.push((s, cache, ratio));
        }
    }
    let excluded = samples.len() - kept.len();
    let entropy = head.entropy(log_std);
    if kept.is_empty() {
        return Ok(ActorLoss {
            loss: -entropy_coef * entropy,
            entropy,
            excluded,
            clip_fraction: 0.0,
        });
    }
    let n = kept.len() as f64;
    let mut surrogate = 0.0;
    let mut clipped = 0;
    for (s, cache, ratio) in &kept {
        surrogate += clipped_surrogate(*ratio, s.advantage, clip_eps);
        let unclipped_active = ratio * s.advantage <= ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * s.advantage;
        if !unclipped_active {
            clipped += 1;
        }
        if let Some(g) = grad.as_deref_mut() {
            if !unclipped_active {
                continue;
            }
            // d(-rho A / N)/d log_prob = -rho A / N
            let w = -ratio * s.advantage / n;
            let (dm, ds) = head.log_prob_grad(s.raw_action, &cache.output, log_std);
            let d_out: Vec<f64> = dm.iter().map(|d| w * d).collect();
            actor.backward(params, cache, &d_out, g);
            for k in 0..dim {
                g[log_std_at + k] += w * ds[k];
            }
        }
    }
    if let Some(g) = grad {
        for k in 0..dim {
            g[log_std_at + k] -= entropy_coef;
        }
    }
    Ok(ActorLoss {
        loss: -surrogate / n - entropy_coef * entropy,
        entropy,
        excluded,
        clip_fraction: clipped as f64 / n,
    })
}

/// Mean squared error between critic outputs and return targets.
pub fn critic_loss(
    critic: &PolicyNet,
    params: &[f64],
    inputs: &[&[f64]],
    returns: &[f64],
    mut grad: Option<&mut [f64]>,
) -> Result<f64, MarlError> {
    if inputs.len() != returns.len() {
        return Err(MarlError::Length {
            what: "critic targets",
            expected: inputs.len(),
            found: returns.len(),
        });
    }
    if inputs.is_empty() {
        return Ok(0.0);
    }
    let n = inputs.len() as f64;
    let mut loss = 0.0;
    for (x, target) in inputs.iter().zip(returns) {
        let cache = critic.forward_cached(params, x)?;
        let err = cache.output[0] - target;
        loss += err * err;
        if let Some(g) = grad.as_deref_mut() {
            critic.backward(params, &cache, &[2.0 * err / n], g);
        }
    }
    Ok(loss / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ActionBounds, Activation, BiLstmSpec, Encoder, NetSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn myopic_td_is_reward_minus_value() {
        let (td, adv, ret) =
            compute_td_and_advantage(&[1.0, 2.0], &[0.5, 0.25], &[false, true], 0.0, 0.7, 9.0).unwrap();
        assert_eq!(td, vec![0.5, 1.75]);
        assert_eq!(adv, td);
        assert_eq!(ret, vec![1.0, 2.0]);
    }

    #[test]
    fn td_error_hand_example() {
        // r = 1, gamma = 0.9, V(s') = 2, V(s) = 1 -> d = 1.8
        let (td, adv, _) =
            compute_td_and_advantage(&[1.0, 0.0], &[1.0, 2.0], &[false, true], 0.9, 0.0, 0.0).unwrap();
        assert!((td[0] - 1.8).abs() < 1e-15);
        assert_eq!(adv[0], td[0]);
    }

    #[test]
    fn gae_accumulates_within_episodes_only() {
        let r = [1.0, 1.0, 1.0, 1.0];
        let v = [0.0; 4];
        let d = [false, true, false, false];
        let (_, adv, _) = compute_td_and_advantage(&r, &v, &d, 0.5, 1.0, 4.0).unwrap();
        assert_eq!(adv[1], 1.0);
        assert_eq!(adv[0], 1.0 + 0.5 * 1.0);
        assert_eq!(adv[3], 1.0 + 0.5 * 4.0);
        assert_eq!(adv[2], 1.0 + 0.5 * adv[3]);
        assert!(compute_td_and_advantage(&r, &v[..3], &d, 0.5, 1.0, 0.0).is_err());
    }

    #[test]
    fn surrogate_hand_examples() {
        assert_eq!(clipped_surrogate(1.0, 1.0, 0.2), 1.0);
        assert!((clipped_surrogate(2.0, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert!((clipped_surrogate(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalised_advantages_have_unit_spread() {
        let z = normalize(&[1.0, 2.0, 3.0, 6.0]);
        let mean: f64 = z.iter().sum::<f64>() / 4.0;
        let var: f64 = z.iter().map(|x| x * x).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-15 && (var - 1.0).abs() < 1e-12);
        assert_eq!(normalize(&[2.0, 2.0]), vec![0.0, 0.0]);
    }

    fn tiny_actor(rng: &mut ChaCha8Rng) -> (PolicyNet, GaussianHead) {
        let spec = NetSpec {
            input_dim: 7,
            encoder: Encoder::BiLstm(BiLstmSpec {
                steps: 3,
                step_dim: 2,
                hidden_dim: 2,
            }),
            mlp_widths: vec![4],
            activation: Activation::Relu,
            output_dim: 2,
            log_std: true,
        };
        let net = PolicyNet::initialized(spec, rng, -0.3).unwrap();
        let head = GaussianHead::new(ActionBounds::new(vec![0.4, 0.0], vec![1.0, 10.0]).unwrap());
        (net, head)
    }

    #[test]
    fn identical_policies_give_unclipped_mean_advantage() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (net, head) = tiny_actor(&mut rng);
        let inputs: Vec<Vec<f64>> = (0..6).map(|_| (0..7).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let raws: Vec<Vec<f64>> = (0..6).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let advs: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ls = net.log_std().to_vec();
        let samples: Vec<PpoSample> = (0..6)
            .map(|i| PpoSample {
                input: &inputs[i],
                raw_action: &raws[i],
                log_prob_old: head.log_prob(&raws[i], &net.forward(&inputs[i]).unwrap(), &ls),
                advantage: advs[i],
            })
            .collect();
        let out = ppo_actor_loss(&net, &head, &net.params.values, &samples, 0.2, 0.0, None).unwrap();
        let mean_adv = advs.iter().sum::<f64>() / 6.0;
        assert!((out.loss + mean_adv).abs() < 1e-12);
        assert_eq!(out.clip_fraction, 0.0);
    }

    #[test]
    fn actor_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (net, head) = tiny_actor(&mut rng);
        assert!(net.num_params() <= 200);
        let n = 8;
        let inputs: Vec<Vec<f64>> = (0..n).map(|_| (0..7).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let raws: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let advs: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ls = net.log_std().to_vec();
        // Old log-probs perturbed by up to 0.1 so the ratio stays inside the clip band.
        let old: Vec<f64> = (0..n)
            .map(|i| head.log_prob(&raws[i], &net.forward(&inputs[i]).unwrap(), &ls) + rng.random_range(-0.1..0.1))
            .collect();
        let samples: Vec<PpoSample> = (0..n)
            .map(|i| PpoSample {
                input: &inputs[i],
                raw_action: &raws[i],
                log_prob_old: old[i],
                advantage: advs[i],
            })
            .collect();
        let params = net.params.values.clone();
        let mut grad = vec![0.0; params.len()];
        ppo_actor_loss(&net, &head, &params, &samples, 0.2, 1e-3, Some(&mut grad)).unwrap();
        let loss = |p: &[f64]| ppo_actor_loss(&net, &head, p, &samples, 0.2, 1e-3, None).unwrap().loss;
        let h = 1e-5;
        for i in 0..params.len() {
            let mut up = params.clone();
            up[i] += h;
            let mut dn = params.clone();
            dn[i] -= h;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            assert!(err < 1e-4, "param {i}: fd {fd} analytic {}", grad[i]);
        }
    }

    #[test]
    fn critic_loss_examples() {
        let spec = NetSpec {
            input_dim: 2,
            encoder: Encoder::Mlp,
            mlp_widths: vec![],
            activation: Activation::Relu,
            output_dim: 1,
            log_std: false,
        };
        let mut critic = PolicyNet::new(spec).unwrap();
        let a = [1.0, 0.0];
        let b = [0.0, 2.0];
        let inputs: Vec<&[f64]> = vec![&a, &b];
        assert_eq!(critic_loss(&critic, &critic.params.values, &inputs, &[1.0, 1.0], None).unwrap(), 1.0);
        // V(x) = 0.5 x0 + 1.5 x1 + 0.25 -> outputs 0.75 and 3.25.
        critic.params.values.copy_from_slice(&[0.5, 1.5, 0.25]);
        let l = critic_loss(&critic, &critic.params.values, &inputs, &[1.0, 3.0], None).unwrap();
        assert!((l - (0.0625 + 0.0625) / 2.0).abs() < 1e-15);
        let l = critic_loss(&critic, &critic.params.values, &inputs, &[0.75, 3.25], None).unwrap();
        assert_eq!(l, 0.0);
        let mut grad = vec![0.0; 3];
        critic_loss(&critic, &critic.params.values, &inputs, &[1.0, 3.0], Some(&mut grad)).unwrap();
        // d/dw = mean(2 err x): errs -0.25, 0.25
        assert!((grad[0] + 0.25).abs() < 1e-15 && (grad[1] - 0.5).abs() < 1e-15 && grad[2].abs() < 1e-15);
    }
}
