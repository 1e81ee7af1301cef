//! Path-kernel saliency through two linear companions of the actor.
//!
//! `h^k`: weights squared, biases dropped, every gain 1, all-ones input.
//! `g^k`: weights 1, biases dropped, input squared, each unit's gain frozen
//! to the square of its local derivative on a data point (the ReLU
//! indicator for rectified layers). LSTM cells are linearised around the
//! data point: `c = gf c_prev + ki z_i + kf z_f + kg z_g`, `h = eta c + ko z_o`
//! with `z = W x + U h_prev`.
//!
//! `R = sum_n sum_k g^k(x_n) h^k(theta^2)` and the saliency of a weight is
//! `theta^2 * dR/d(theta^2)`, with `dR/d(theta^2)` from one reverse pass
//! through `h` seeded with `G_k = sum_n g^k(x_n)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PruneError;
use crate::nn::{Activation, Dense, ForwardCache, Lstm, LstmStep, PolicyNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaliencyOptions {
    /// Allow LSTM and tanh layers through their frozen-gate linearisation.
    pub gated_linear: bool,
    /// Score only feed-forward weight matrices.
    pub mlp_only: bool,
}

impl Default for SaliencyOptions {
    fn default() -> Self {
        Self {
            gated_linear: true,
            mlp_only: false,
        }
    }
}

/// Scores of the prunable weights, aligned with `indices` into the parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyVector {
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct StepGains {
    gf: Vec<f64>,
    ki: Vec<f64>,
    kf: Vec<f64>,
    kg: Vec<f64>,
    eta: Vec<f64>,
    ko: Vec<f64>,
}

impl StepGains {
    fn ones(h: usize) -> Self {
        let one = vec![1.0; h];
        Self {
            gf: one.clone(),
            ki: one.clone(),
            kf: one.clone(),
            kg: one.clone(),
            eta: one.clone(),
            ko: one,
        }
    }

    fn squared_jacobian(s: &LstmStep) -> Self {
        let sq = |x: f64| x * x;
        let h = s.h.len();
        let map = |f: &dyn Fn(usize) -> f64| (0..h).map(|k| sq(f(k))).collect::<Vec<f64>>();
        Self {
            gf: map(&|k| s.f[k]),
            ki: map(&|k| s.g[k] * s.i[k] * (1.0 - s.i[k])),
            kf: map(&|k| s.c_prev[k] * s.f[k] * (1.0 - s.f[k])),
            kg: map(&|k| s.i[k] * (1.0 - s.g[k] * s.g[k])),
            eta: map(&|k| s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k])),
            ko: map(&|k| s.tanh_c[k] * s.o[k] * (1.0 - s.o[k])),
        }
    }
}

/// Per-unit gains of one companion evaluation.
#[derive(Debug, Clone, PartialEq)]
struct Gains {
    fwd: Vec<StepGains>,
    bwd: Vec<StepGains>,
    dense: Vec<Vec<f64>>,
}

impl Gains {
    fn ones(net: &PolicyNet) -> Self {
        let (fwd, bwd) = match (net.lstm_chains(), net.spec.encoder) {
            (Some((f, _)), crate::nn::Encoder::BiLstm(b)) => (
                vec![StepGains::ones(f.hidden); b.steps],
                vec![StepGains::ones(f.hidden); b.steps],
            ),
            _ => (Vec::new(), Vec::new()),
        };
        Self {
            fwd,
            bwd,
            dense: net.dense_layers().iter().map(|d| vec![1.0; d.out]).collect(),
        }
    }

    fn from_cache(net: &PolicyNet, cache: &ForwardCache) -> Self {
        Self {
            fwd: cache.fwd_steps.iter().map(StepGains::squared_jacobian).collect(),
            bwd: cache.bwd_steps.iter().map(StepGains::squared_jacobian).collect(),
            dense: net
                .dense_layers()
                .iter()
                .zip(&cache.dense_pre)
                .map(|(d, pre)| pre.iter().map(|z| d.activation.derivative(*z).powi(2)).collect())
                .collect(),
        }
    }
}

struct LinearStep {
    input: Vec<f64>,
    h_prev: Vec<f64>,
    h: Vec<f64>,
}

fn linear_lstm_forward(l: &Lstm, w: &[f64], inputs: &[&[f64]], gains: &[StepGains]) -> Vec<LinearStep> {
    let hd = l.hidden;
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    let mut out = Vec::with_capacity(inputs.len());
    for (x, gn) in inputs.iter().zip(gains) {
        let mut z = vec![0.0; 4 * hd];
        for (row, zr) in z.iter_mut().enumerate() {
            let wi = l.input_weight + row * l.inp;
            let ui = l.recurrent_weight + row * hd;
            *zr = (0..l.inp).map(|j| w[wi + j] * x[j]).sum::<f64>()
                + (0..hd).map(|j| w[ui + j] * h[j]).sum::<f64>();
        }
        let c_new: Vec<f64> = (0..hd)
            .map(|k| gn.gf[k] * c[k] + gn.ki[k] * z[k] + gn.kf[k] * z[hd + k] + gn.kg[k] * z[2 * hd + k])
            .collect();
        let h_new: Vec<f64> = (0..hd).map(|k| gn.eta[k] * c_new[k] + gn.ko[k] * z[3 * hd + k]).collect();
        out.push(LinearStep {
            input: x.to_vec(),
            h_prev: h,
            h: h_new.clone(),
        });
        h = h_new;
        c = c_new;
    }
    out
}

fn linear_lstm_backward(
    l: &Lstm,
    w: &[f64],
    steps: &[LinearStep],
    gains: &[StepGains],
    d_last: &[f64],
    grad: &mut [f64],
) {
    let hd = l.hidden;
    let n = steps.len();
    let mut dh = d_last.to_vec();
    let mut dc_next = vec![0.0; hd];
    for t in (0..n).rev() {
        let (s, gn) = (&steps[t], &gains[t]);
        let mut dz = vec![0.0; 4 * hd];
        let mut dc = vec![0.0; hd];
        for k in 0..hd {
            dc[k] = dc_next[k] + gn.eta[k] * dh[k];
            dz[k] = gn.ki[k] * dc[k];
            dz[hd + k] = gn.kf[k] * dc[k];
            dz[2 * hd + k] = gn.kg[k] * dc[k];
            dz[3 * hd + k] = gn.ko[k] * dh[k];
            dc_next[k] = gn.gf[k] * dc[k];
        }
        let mut dh_prev = vec![0.0; hd];
        for (row, d) in dz.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            let wi = l.input_weight + row * l.inp;
            for j in 0..l.inp {
                grad[wi + j] += d * s.input[j];
            }
            let ui = l.recurrent_weight + row * hd;
            for j in 0..hd {
                grad[ui + j] += d * s.h_prev[j];
                dh_prev[j] += w[ui + j] * d;
            }
        }
        dh = dh_prev;
    }
}

fn linear_dense_forward(d: &Dense, w: &[f64], x: &[f64], gain: &[f64]) -> Vec<f64> {
    (0..d.out)
        .map(|i| {
            let row = d.weight + i * d.inp;
            gain[i] * (0..d.inp).map(|j| w[row + j] * x[j]).sum::<f64>()
        })
        .collect()
}

struct CompanionCache {
    fwd: Vec<LinearStep>,
    bwd: Vec<LinearStep>,
    dense_inputs: Vec<Vec<f64>>,
    output: Vec<f64>,
}

fn companion_forward(net: &PolicyNet, w: &[f64], x: &[f64], gains: &Gains) -> CompanionCache {
    let (seq, context) = net.split_input(x);
    let (mut fwd, mut bwd) = (Vec::new(), Vec::new());
    let mut feature = Vec::new();
    if let Some((lf, lb)) = net.lstm_chains() {
        fwd = linear_lstm_forward(&lf, w, &seq, &gains.fwd);
        let rev: Vec<&[f64]> = seq.iter().rev().copied().collect();
        bwd = linear_lstm_forward(&lb, w, &rev, &gains.bwd);
        feature.extend_from_slice(&fwd.last().expect("steps >= 1").h);
        feature.extend_from_slice(&bwd.last().expect("steps >= 1").h);
    }
    feature.extend_from_slice(context);
    let mut dense_inputs = Vec::new();
    let mut h = feature;
    for (d, g) in net.dense_layers().iter().zip(&gains.dense) {
        let out = linear_dense_forward(d, w, &h, g);
        dense_inputs.push(h);
        h = out;
    }
    CompanionCache {
        fwd,
        bwd,
        dense_inputs,
        output: h,
    }
}

fn companion_backward(net: &PolicyNet, w: &[f64], cache: &CompanionCache, gains: &Gains, seed: &[f64]) -> Vec<f64> {
    let mut grad = vec![0.0; w.len()];
    let mut d = seed.to_vec();
    for (k, layer) in net.dense_layers().iter().enumerate().rev() {
        let x = &cache.dense_inputs[k];
        let mut dx = vec![0.0; layer.inp];
        for i in 0..layer.out {
            let dp = d[i] * gains.dense[k][i];
            if dp == 0.0 {
                continue;
            }
            let row = layer.weight + i * layer.inp;
            for j in 0..layer.inp {
                grad[row + j] += dp * x[j];
                dx[j] += w[row + j] * dp;
            }
        }
        d = dx;
    }
    if let Some((lf, lb)) = net.lstm_chains() {
        let h = lf.hidden;
        linear_lstm_backward(&lf, w, &cache.fwd, &gains.fwd, &d[..h], &mut grad);
        linear_lstm_backward(&lb, w, &cache.bwd, &gains.bwd, &d[h..2 * h], &mut grad);
    }
    grad
}

fn check_supported(net: &PolicyNet, opts: &SaliencyOptions) -> Result<(), PruneError> {
    if opts.gated_linear {
        return Ok(());
    }
    if net.lstm_chains().is_some() {
        return Err(PruneError::Unsupported(
            "LSTM gates are not rectified; enable gated_linear".into(),
        ));
    }
    let n = net.dense_layers().len();
    for (k, d) in net.dense_layers().iter().enumerate() {
        let ok = d.activation == Activation::Relu || (k + 1 == n && d.activation == Activation::Identity);
        if !ok {
            return Err(PruneError::Unsupported(format!(
                "layer {k} uses {:?}; enable gated_linear",
                d.activation
            )));
        }
    }
    Ok(())
}

/// Companion weights: `f` applied to every weight entry, zero elsewhere.
fn companion_weights(net: &PolicyNet, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut w = vec![0.0; net.num_params()];
    for b in net.params.layout.iter().filter(|b| b.role.is_weight()) {
        for i in b.range() {
            w[i] = f(net.params.values[i]);
        }
    }
    w
}

/// `g^k(x^2, 1, a(x))` for one input.
pub fn g_pass(net: &PolicyNet, x: &[f64]) -> Result<Vec<f64>, PruneError> {
    let cache = net.forward_cached(&net.params.values, x)?;
    let gains = Gains::from_cache(net, &cache);
    let x2: Vec<f64> = x.iter().map(|v| v * v).collect();
    let ones = companion_weights(net, |_| 1.0);
    Ok(companion_forward(net, &ones, &x2, &gains).output)
}

/// `h^k(1, theta^2, 1)` with `theta` read from `params`.
pub fn h_pass(net: &PolicyNet, params: &[f64]) -> Vec<f64> {
    let mut probe = net.clone();
    probe.params.values.copy_from_slice(params);
    let w = companion_weights(&probe, |t| t * t);
    let ones = vec![1.0; net.spec.input_dim];
    companion_forward(net, &w, &ones, &Gains::ones(net)).output
}

/// Sum of `g^k` over the dataset, per output.
pub fn g_totals(net: &PolicyNet, inputs: &[Vec<f64>]) -> Result<Vec<f64>, PruneError> {
    let per_point: Vec<Result<Vec<f64>, PruneError>> = inputs.par_iter().map(|x| g_pass(net, x)).collect();
    // Summed in dataset order so the result does not depend on scheduling.
    let mut total = vec![0.0; net.spec.output_dim];
    for g in per_point {
        for (t, v) in total.iter_mut().zip(g?) {
            *t += v;
        }
    }
    Ok(total)
}

/// `R = sum_n sum_k g^k(x_n) h^k(theta^2)`.
pub fn px_objective(net: &PolicyNet, inputs: &[Vec<f64>]) -> Result<f64, PruneError> {
    let g = g_totals(net, inputs)?;
    Ok(g.iter().zip(h_pass(net, &net.params.values)).map(|(a, b)| a * b).sum())
}

pub fn px_saliency(net: &PolicyNet, inputs: &[Vec<f64>], opts: &SaliencyOptions) -> Result<SaliencyVector, PruneError> {
    check_supported(net, opts)?;
    if inputs.is_empty() {
        return Err(PruneError::EmptyDataset);
    }
    let g = g_totals(net, inputs)?;
    let w = companion_weights(net, |t| t * t);
    let ones = vec![1.0; net.spec.input_dim];
    let gains = Gains::ones(net);
    let cache = companion_forward(net, &w, &ones, &gains);
    let d_theta2 = companion_backward(net, &w, &cache, &gains, &g);
    let indices = net.params.prunable_indices(opts.mlp_only);
    let scores: Vec<f64> = indices.iter().map(|&i| w[i] * d_theta2[i]).collect();
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(PruneError::NonFinite);
    }
    Ok(SaliencyVector { indices, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{BiLstmSpec, Encoder, NetSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mlp(input: usize, widths: Vec<usize>, out: usize, act: Activation) -> NetSpec {
        NetSpec {
            input_dim: input,
            encoder: Encoder::Mlp,
            mlp_widths: widths,
            activation: act,
            output_dim: out,
            log_std: false,
        }
    }

    #[test]
    fn single_weight_saliency_is_theta_squared() {
        let mut net = PolicyNet::new(mlp(1, vec![], 1, Activation::Relu)).unwrap();
        net.params.values.copy_from_slice(&[1.7, 0.3]);
        let s = px_saliency(&net, &[vec![1.0]], &SaliencyOptions::default()).unwrap();
        assert_eq!(s.indices, vec![0]);
        assert!((s.scores[0] - 1.7 * 1.7).abs() < 1e-15);
        assert!((px_objective(&net, &[vec![1.0]]).unwrap() - 1.7 * 1.7).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_score_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = PolicyNet::initialized(mlp(3, vec![4], 2, Activation::Relu), &mut rng, 0.0).unwrap();
        net.params.values[2] = 0.0;
        let xs: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let s = px_saliency(&net, &xs, &SaliencyOptions::default()).unwrap();
        assert_eq!(s.scores[2], 0.0);
        assert!(s.scores.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn non_rectified_layers_need_the_gate_approximation() {
        let strict = SaliencyOptions {
            gated_linear: false,
            mlp_only: false,
        };
        let tanh = PolicyNet::new(mlp(2, vec![2], 1, Activation::Tanh)).unwrap();
        assert!(matches!(px_saliency(&tanh, &[vec![1.0, 1.0]], &strict), Err(PruneError::Unsupported(_))));
        let spec = NetSpec {
            input_dim: 4,
            encoder: Encoder::BiLstm(BiLstmSpec {
                steps: 2,
                step_dim: 2,
                hidden_dim: 2,
            }),
            ..mlp(4, vec![2], 1, Activation::Relu)
        };
        let rnn = PolicyNet::new(spec).unwrap();
        assert!(px_saliency(&rnn, &[vec![0.0; 4]], &strict).is_err());
        assert!(px_saliency(&rnn, &[vec![0.0; 4]], &SaliencyOptions::default()).is_ok());
        assert!(matches!(
            px_saliency(&tanh, &[], &SaliencyOptions::default()),
            Err(PruneError::EmptyDataset)
        ));
    }

    /// `S_i = (theta_i / 2) dR/dtheta_i` with the g factor frozen.
    #[test]
    fn bilstm_saliency_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = NetSpec {
            input_dim: 7,
            encoder: Encoder::BiLstm(BiLstmSpec {
                steps: 3,
                step_dim: 2,
                hidden_dim: 2,
            }),
            mlp_widths: vec![3],
            activation: Activation::Relu,
            output_dim: 2,
            log_std: true,
        };
        let net = PolicyNet::initialized(spec, &mut rng, 0.0).unwrap();
        let xs: Vec<Vec<f64>> = (0..5).map(|_| (0..7).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let s = px_saliency(&net, &xs, &SaliencyOptions::default()).unwrap();
        let g = g_totals(&net, &xs).unwrap();
        let r = |p: &[f64]| -> f64 { g.iter().zip(h_pass(&net, p)).map(|(a, b)| a * b).sum() };
        let eps = 1e-6;
        for (i, score) in s.indices.iter().zip(&s.scores) {
            let mut up = net.params.values.clone();
            up[*i] += eps;
            let mut dn = net.params.values.clone();
            dn[*i] -= eps;
            let fd = 0.5 * net.params.values[*i] * (r(&up) - r(&dn)) / (2.0 * eps);
            let err = (fd - score).abs() / fd.abs().max(score.abs()).max(1e-8);
            assert!(err < 1e-5, "param {i}: fd {fd} companion {score}");
        }
        let dense_only = px_saliency(
            &net,
            &xs,
            &SaliencyOptions {
                gated_linear: true,
                mlp_only: true,
            },
        )
        .unwrap();
        assert_eq!(dense_only.indices.len(), 3 * 5 + 2 * 3);
    }

    #[test]
    fn lstm_g_gains_are_squared_cell_jacobians() {
        // One step, hidden 1, no MLP: g = sum over input paths of gain products times x^2.
        let spec = NetSpec {
            input_dim: 1,
            encoder: Encoder::BiLstm(BiLstmSpec {
                steps: 1,
                step_dim: 1,
                hidden_dim: 1,
            }),
            mlp_widths: vec![],
            activation: Activation::Relu,
            output_dim: 1,
            log_std: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = PolicyNet::initialized(spec, &mut rng, 0.0).unwrap();
        let x = 0.7;
        let cache = net.forward_cached(&net.params.values, &[x]).unwrap();
        let sum_paths = |s: &LstmStep| {
            let gn = StepGains::squared_jacobian(s);
            // Paths x -> z_j -> c -> h for j in i, f, g and x -> z_o -> h.
            gn.eta[0] * (gn.ki[0] + gn.kf[0] + gn.kg[0]) + gn.ko[0]
        };
        let expected = (sum_paths(&cache.fwd_steps[0]) + sum_paths(&cache.bwd_steps[0])) * x * x;
        let got = g_pass(&net, &[x]).unwrap()[0];
        assert!((got - expected).abs() < 1e-14, "{got} vs {expected}");
    }
}
