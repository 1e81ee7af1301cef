//! Brute-force path enumeration for rectified MLPs, independent of the
//! companion-network implementation.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vean::nn::{Activation, Encoder, NetSpec, PolicyNet};

/// Layer weights `[out][in]` and biases read straight from the named blocks.
struct Layers {
    sizes: Vec<usize>,
    weight_offsets: Vec<usize>,
    w: Vec<Vec<Vec<f64>>>,
    b: Vec<Vec<f64>>,
}

fn layers(net: &PolicyNet) -> Layers {
    let n_hidden = net.spec.mlp_widths.len();
    let mut sizes = vec![net.spec.input_dim];
    sizes.extend(&net.spec.mlp_widths);
    sizes.push(net.spec.output_dim);
    let mut out = Layers {
        sizes: sizes.clone(),
        weight_offsets: Vec::new(),
        w: Vec::new(),
        b: Vec::new(),
    };
    for l in 0..=n_hidden {
        let name = if l == n_hidden { "out".to_string() } else { format!("mlp{l}") };
        let wb = net.params.block(&format!("{name}.w")).expect("weight block");
        let bb = net.params.block(&format!("{name}.b")).expect("bias block");
        let (inp, o) = (sizes[l], sizes[l + 1]);
        assert_eq!((wb.rows, wb.cols), (o, inp));
        let vals = &net.params.values;
        out.weight_offsets.push(wb.offset);
        out.w.push((0..o).map(|i| (0..inp).map(|j| vals[wb.offset + i * inp + j]).collect()).collect());
        out.b.push(vals[bb.offset..bb.offset + o].to_vec());
    }
    out
}

/// ReLU indicators of every hidden layer on one input.
fn indicators(ls: &Layers, x: &[f64]) -> Vec<Vec<bool>> {
    let mut h = x.to_vec();
    let mut on = Vec::new();
    for l in 0..ls.w.len() - 1 {
        let pre: Vec<f64> = ls.w[l]
            .iter()
            .zip(&ls.b[l])
            .map(|(row, b)| row.iter().zip(&h).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect();
        on.push(pre.iter().map(|z| *z > 0.0).collect::<Vec<bool>>());
        h = pre.iter().map(|z| z.max(0.0)).collect();
    }
    on
}

/// Every input-to-output path as its neuron sequence `[s, j1, .., k]`.
fn paths(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut all: Vec<Vec<usize>> = (0..sizes[0]).map(|s| vec![s]).collect();
    for &n in &sizes[1..] {
        all = all
            .into_iter()
            .flat_map(|p| (0..n).map(move |j| {
                let mut q = p.clone();
                q.push(j);
                q
            }))
            .collect();
    }
    all
}

/// Saliency of every weight entry, keyed by parameter index, by summing
/// `G_k * v_p(theta^2)` over the paths through it.
pub fn path_saliency(net: &PolicyNet, inputs: &[Vec<f64>]) -> Vec<(usize, f64)> {
    let ls = layers(net);
    let k_out = *ls.sizes.last().unwrap();
    let all = paths(&ls.sizes);
    let mut g = vec![0.0; k_out];
    for x in inputs {
        let on = indicators(&ls, x);
        for p in &all {
            let active = (1..p.len() - 1).all(|l| on[l - 1][p[l]]);
            if active {
                g[*p.last().unwrap()] += x[p[0]] * x[p[0]];
            }
        }
    }
    let mut scores = std::collections::BTreeMap::new();
    for l in 0..ls.w.len() {
        for i in 0..ls.sizes[l + 1] {
            for j in 0..ls.sizes[l] {
                scores.insert(ls.weight_offsets[l] + i * ls.sizes[l] + j, 0.0);
            }
        }
    }
    for p in &all {
        let k = *p.last().unwrap();
        let v: f64 = (0..p.len() - 1).map(|l| ls.w[l][p[l + 1]][p[l]].powi(2)).product();
        for l in 0..p.len() - 1 {
            let idx = ls.weight_offsets[l] + p[l + 1] * ls.sizes[l] + p[l];
            *scores.get_mut(&idx).unwrap() += g[k] * v;
        }
    }
    scores.into_iter().collect()
}

/// Rectified MLPs with at most 30 parameters, biases included.
pub fn small_rectified_nets(count: usize, seed: u64) -> Vec<PolicyNet> {
    let shapes: [(usize, &[usize], usize); 8] = [
        (2, &[2], 1),
        (3, &[3], 2),
        (2, &[3, 2], 1),
        (1, &[4], 1),
        (3, &[4], 1),
        (2, &[2, 2], 2),
        (4, &[2], 3),
        (1, &[], 3),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let (inp, widths, out) = shapes[i % shapes.len()];
            let spec = NetSpec {
                input_dim: inp,
                encoder: Encoder::Mlp,
                mlp_widths: widths.to_vec(),
                activation: Activation::Relu,
                output_dim: out,
                log_std: false,
            };
            let mut net = PolicyNet::new(spec).unwrap();
            assert!(net.num_params() <= 30);
            for v in net.params.values.iter_mut() {
                *v = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(-1.5..1.5) };
            }
            net
        })
        .collect()
}

pub fn random_inputs(n: usize, dim: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
}
