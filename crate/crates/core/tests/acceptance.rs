//! End-to-end acceptance checks. Runs without the libtest harness so every
//! check prints exactly one PASS/FAIL line; exits non-zero if any fails.

mod common;

use std::f64::consts::E;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vean::env::{AgentId, EnvConfig, MarketEnv};
use vean::game::*;
use vean::harness::{compare_report, run_experiment, ExperimentSpec, SweepAxes};
use vean::marl::*;
use vean::nn::*;
use vean::pruning::*;

struct Outcome {
    passed: bool,
    detail: String,
}

fn report(results: &mut Vec<bool>, label: &str, start: Instant, out: Outcome) {
    let tag = if out.passed { "PASS" } else { "FAIL" };
    println!("{tag} {label}: {} [{:.1}s]", out.detail, start.elapsed().as_secs_f64());
    results.push(out.passed);
}

// Test-side market formulas.

fn theta(g: &GameInstance, r: usize, v: usize, p: &[f64]) -> f64 {
    let inv: f64 = p.iter().map(|x| 1.0 / x).sum();
    g.avs[v].importance / p[r] / inv
}

fn follower_term(g: &GameInstance, r: usize, v: usize, p: &[f64], b: f64) -> f64 {
    let t = &g.avs[v];
    theta(g, r, v, p) * g.marginal_beta * ((E + t.importance * b / t.deadline).ln() - p[r] * b)
}

fn demand(g: &GameInstance, v: usize, p: f64) -> f64 {
    let t = &g.avs[v];
    (1.0 / p - E * t.deadline / t.importance).clamp(0.0, g.max_bandwidth)
}

/// RSU `r`'s profit when every AV best-responds to `p`.
fn leader_profit(g: &GameInstance, r: usize, p: &[f64]) -> f64 {
    (0..g.num_avs())
        .map(|v| theta(g, r, v, p) * (p[r] - g.rsus[r].base_cost) * demand(g, v, p[r]))
        .sum()
}

fn grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
}

fn random_prices(g: &GameInstance, rng: &mut impl Rng) -> Vec<f64> {
    g.rsus.iter().map(|r| rng.random_range(r.base_cost..=r.max_price)).collect()
}

fn follower_oracle() -> Outcome {
    let start = Instant::now();
    let sampler = InstanceSampler {
        interior_followers: false,
        ..InstanceSampler::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for i in 0..200 {
        let g = sampler.sample_seeded(1000 + i);
        let p = random_prices(&g, &mut rng);
        let v = rng.random_range(0..g.num_avs());
        let closed = follower_best_response(v, &PriceVector(p.clone()), &g);
        for r in 0..g.num_rsus() {
            // The utility is separable over RSUs, so a per-coordinate grid is the joint argmax.
            let best = grid(0.0, g.max_bandwidth, 100_000)
                .map(|b| (b, follower_term(&g, r, v, &p, b)))
                .fold((0.0, f64::NEG_INFINITY), |a, x| if x.1 > a.1 { x } else { a })
                .0;
            worst = worst.max((closed[r] - best).abs() / closed[r].abs().max(1.0));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        passed: worst < 1e-3 && secs < 30.0,
        detail: format!("200 instances, max relative bandwidth error {worst:.2e}"),
    }
}

fn leader_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let sampler = InstanceSampler {
        interior_followers: false,
        ..InstanceSampler::default()
    };
    let mut worst = 0.0f64;
    for i in 0..200 {
        let g = sampler.sample_seeded(2000 + i);
        let mut p = random_prices(&g, &mut rng);
        let r = rng.random_range(0..g.num_rsus());
        let others: Vec<f64> = (0..g.num_rsus()).filter(|l| *l != r).map(|l| 1.0 / p[l]).collect();
        let cfg = g.rsus[r];
        let mut best = f64::NEG_INFINITY;
        for q in grid(cfg.base_cost, cfg.max_price, 100_000) {
            p[r] = q;
            best = best.max(leader_profit(&g, r, &p));
        }
        p[r] = leader_best_response(r, &others, &g);
        let got = leader_profit(&g, r, &p);
        worst = worst.max((best - got) / best.abs().max(1e-12));
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        passed: worst <= 0.01 && secs < 60.0,
        detail: format!("200 instances, max utility gap {:.2e}%", 100.0 * worst.max(0.0)),
    }
}

fn equilibrium_stability() -> Outcome {
    let opts = SolverOptions {
        tol: 1e-10,
        max_iter: 500,
        ..SolverOptions::default()
    };
    let mut max_residual = 0.0f64;
    let mut max_gain = 0.0f64;
    let mut failures = 0;
    for i in 0..100 {
        let g = InstanceSampler::default().sample_seeded(3000 + i);
        let eq = match solve_equilibrium(&g, &opts) {
            Ok(eq) => eq,
            Err(_) => {
                failures += 1;
                continue;
            }
        };
        max_residual = max_residual.max(eq.residual);
        let p = eq.prices.0.clone();
        for r in 0..g.num_rsus() {
            let base = leader_profit(&g, r, &p);
            let mut q = p.clone();
            for x in grid(g.rsus[r].base_cost, g.rsus[r].max_price, 1000) {
                q[r] = x;
                max_gain = max_gain.max(leader_profit(&g, r, &q) - base);
            }
        }
        for v in 0..g.num_avs() {
            for r in 0..g.num_rsus() {
                let base = follower_term(&g, r, v, &p, eq.bandwidths.get(r, v));
                for b in grid(0.0, g.max_bandwidth, 1000) {
                    max_gain = max_gain.max(follower_term(&g, r, v, &p, b) - base);
                }
            }
        }
    }
    Outcome {
        passed: failures == 0 && max_residual < 1e-6 && max_gain <= 1e-6,
        detail: format!(
            "100 instances, {failures} unconverged, max residual {max_residual:.1e}, max deviation gain {max_gain:.1e}"
        ),
    }
}

fn standard_function() -> Outcome {
    let g = InstanceSampler::default().default_instance();
    let rep = certify_standard_function(&g, 10_000, 4);
    let bad = rep.positivity.failed + rep.monotonicity.failed + rep.scalability.failed;
    Outcome {
        passed: rep.holds() && bad == 0 && rep.samples == 10_000,
        detail: format!(
            "{} samples; counterexamples: positivity {}, monotonicity {}, scalability {}",
            rep.samples, rep.positivity.failed, rep.monotonicity.failed, rep.scalability.failed
        ),
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn fd(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let (mut up, mut dn) = (x.to_vec(), x.to_vec());
    up[i] += h;
    dn[i] -= h;
    (f(&up) - f(&dn)) / (2.0 * h)
}

fn gradient_suites() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut marginal = 0.0f64;
    for i in 0..50 {
        let g = InstanceSampler::default().sample_seeded(5000 + i);
        let p = PriceVector(random_prices(&g, &mut rng));
        let mut b = BandwidthMatrix::zeros(g.num_rsus(), g.num_avs());
        for r in 0..g.num_rsus() {
            for v in 0..g.num_avs() {
                b.set(r, v, rng.random_range(0.1..g.max_bandwidth));
            }
        }
        let (r, v) = (rng.random_range(0..g.num_rsus()), rng.random_range(0..g.num_avs()));
        let f = |x: &[f64]| {
            let mut bb = b.clone();
            bb.set(r, v, x[0]);
            follower_utility(v, &bb, &p, &g)
        };
        let num = fd(&f, &[b.get(r, v)], 0, 1e-5);
        marginal = marginal.max(rel(follower_marginal(r, v, &b, &p, &g), num));
    }

    let mut net_err = 0.0f64;
    let specs = [
        NetSpec {
            input_dim: 4,
            encoder: Encoder::Mlp,
            mlp_widths: vec![6, 5],
            activation: Activation::Tanh,
            output_dim: 2,
            log_std: true,
        },
        NetSpec {
            input_dim: 7,
            encoder: Encoder::BiLstm(BiLstmSpec {
                steps: 3,
                step_dim: 2,
                hidden_dim: 3,
            }),
            mlp_widths: vec![4],
            activation: Activation::Tanh,
            output_dim: 2,
            log_std: true,
        },
    ];
    for spec in specs {
        let net = PolicyNet::initialized(spec, &mut rng, -0.3).unwrap();
        assert!(net.num_params() <= 200);
        let x: Vec<f64> = (0..net.spec.input_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..net.spec.output_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |p: &[f64]| -> f64 {
            let c = net.forward_cached(p, &x).unwrap();
            c.output.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let mut grad = vec![0.0; net.num_params()];
        let cache = net.forward_cached(&net.params.values, &x).unwrap();
        net.backward(&net.params.values, &cache, &w, &mut grad);
        let end = net.log_std_offset().unwrap_or(net.num_params());
        for (i, gi) in grad.iter().enumerate().take(end) {
            net_err = net_err.max(rel(*gi, fd(&loss, &net.params.values, i, 1e-6)));
        }

        // The forward chain alone, with a loss on every hidden state.
        if let Some((lstm, _)) = net.lstm_chains() {
            let seq: Vec<Vec<f64>> = (0..4).map(|_| (0..lstm.inp).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let refs: Vec<&[f64]> = seq.iter().map(|s| s.as_slice()).collect();
            let wh: Vec<Vec<f64>> = (0..4).map(|_| (0..lstm.hidden).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let loss = |p: &[f64]| -> f64 {
                lstm.forward(p, &refs)
                    .iter()
                    .zip(&wh)
                    .map(|(s, w)| s.h.iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
                    .sum()
            };
            let steps = lstm.forward(&net.params.values, &refs);
            let mut grad = vec![0.0; net.num_params()];
            lstm.backward(&net.params.values, &steps, &wh, &mut grad);
            for (i, gi) in grad.iter().enumerate() {
                if *gi != 0.0 {
                    net_err = net_err.max(rel(*gi, fd(&loss, &net.params.values, i, 1e-6)));
                }
            }
        }
    }

    let head = GaussianHead::new(ActionBounds::new(vec![0.0, -1.0], vec![2.0, 1.0]).unwrap());
    let actor = PolicyNet::initialized(
        NetSpec {
            input_dim: 5,
            encoder: Encoder::BiLstm(BiLstmSpec {
                steps: 2,
                step_dim: 2,
                hidden_dim: 3,
            }),
            mlp_widths: vec![5],
            activation: Activation::Relu,
            output_dim: 2,
            log_std: true,
        },
        &mut rng,
        -0.5,
    )
    .unwrap();
    assert!(actor.num_params() <= 200);
    let inputs: Vec<Vec<f64>> = (0..6).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let mut raws = Vec::new();
    let mut olds = Vec::new();
    for x in &inputs {
        let mean = actor.forward(x).unwrap();
        let ls = actor.log_std();
        let u: Vec<f64> = mean.iter().map(|m| m + 0.3 * rng.random_range(-1.0..1.0)).collect();
        olds.push(head.log_prob(&u, &mean, &ls) + rng.random_range(-0.05..0.05));
        raws.push(u);
    }
    let advs: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let samples: Vec<PpoSample> = (0..6)
        .map(|k| PpoSample {
            input: &inputs[k],
            raw_action: &raws[k],
            log_prob_old: olds[k],
            advantage: advs[k],
        })
        .collect();
    let loss = |p: &[f64]| ppo_actor_loss(&actor, &head, p, &samples, 0.2, 0.01, None).unwrap().loss;
    let mut grad = vec![0.0; actor.num_params()];
    ppo_actor_loss(&actor, &head, &actor.params.values, &samples, 0.2, 0.01, Some(&mut grad)).unwrap();
    let mut ppo_err = 0.0f64;
    for (i, gi) in grad.iter().enumerate() {
        ppo_err = ppo_err.max(rel(*gi, fd(&loss, &actor.params.values, i, 1e-6)));
    }
    Outcome {
        passed: marginal < 1e-5 && net_err < 1e-4 && ppo_err < 1e-4,
        detail: format!(
            "marginal utility rel err {marginal:.1e}; MLP/LSTM/Bi-LSTM {net_err:.1e}; PPO loss {ppo_err:.1e}"
        ),
    }
}

fn ppo_sanity() -> Outcome {
    let start = Instant::now();
    let mut g = InstanceSampler::default().with_size(1, 1).default_instance();
    // Raised cap so the equilibrium price is interior rather than at the cap.
    g.rsus[0].max_price = 3.0;
    let eq = solve_equilibrium(&g, &SolverOptions::default()).unwrap();
    let oracle = eq.leader_utilities(&g)[0];
    let cfg = TrainConfig::default();
    let mut env = MarketEnv::new(EnvConfig::default(), g.clone()).unwrap();
    let mut agents = build_agents(Algorithm::Mablppo, &g, env.config(), &cfg).unwrap();
    agents[1] = PolicyAgent::Oracle(Box::new(OracleAgent::new(AgentId::Follower(0), &g).unwrap()));
    train(&mut env, &mut agents, &cfg).unwrap();
    let ev = evaluate(&mut env, &agents, 2).unwrap();
    let ratio = ev.mean_utilities[0] / oracle;
    Outcome {
        passed: ratio >= 0.95 && start.elapsed() < Duration::from_secs(600),
        detail: format!(
            "trained leader utility {:.4} vs equilibrium {oracle:.4} (ratio {ratio:.4}) after {} episodes",
            ev.mean_utilities[0], cfg.episodes
        ),
    }
}

struct Trained {
    env: MarketEnv,
    agents: Vec<PolicyAgent>,
    cfg: TrainConfig,
}

fn reward_ordering() -> (Outcome, Trained) {
    let g = InstanceSampler::default().default_instance();
    let mut lines = Vec::new();
    let mut passed = true;
    let mut keep = None;
    for seed in 0..3 {
        let env_cfg = EnvConfig {
            rng_seed: seed,
            ..EnvConfig::default()
        };
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let mut finals = Vec::new();
        for alg in [Algorithm::Mablppo, Algorithm::Mappo, Algorithm::Random] {
            let mut env = MarketEnv::new(env_cfg.clone(), g.clone()).unwrap();
            let mut agents = build_agents(alg, &g, env.config(), &cfg).unwrap();
            let rep = train(&mut env, &mut agents, &cfg).unwrap();
            finals.push(rep.final_mean_total(100));
            if seed == 0 && alg == Algorithm::Mablppo {
                keep = Some(Trained {
                    env,
                    agents,
                    cfg: cfg.clone(),
                });
            }
        }
        let (m, p, r) = (finals[0], finals[1], finals[2]);
        let ok = m >= p && p > r && m >= 1.2 * r;
        passed &= ok;
        lines.push(format!("seed {seed}: mablppo {m:.2}, mappo {p:.2}, random {r:.2}"));
    }
    (
        Outcome {
            passed,
            detail: lines.join("; "),
        },
        keep.expect("seed 0 trained"),
    )
}

fn px_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let nets = common::small_rectified_nets(24, 8);
    let mut worst = 0.0f64;
    for net in &nets {
        let xs = common::random_inputs(3, net.spec.input_dim, &mut rng);
        let s = px_saliency(net, &xs, &SaliencyOptions::default()).unwrap();
        let oracle = common::path_saliency(net, &xs);
        assert_eq!(s.indices.len(), oracle.len());
        for ((i, want), (j, got)) in oracle.iter().zip(s.indices.iter().zip(&s.scores)) {
            assert_eq!(i, j);
            worst = worst.max((want - got).abs() / want.abs().max(1.0));
        }
    }
    Outcome {
        passed: worst <= 1e-8,
        detail: format!("{} nets of <= 30 parameters, max deviation {worst:.1e}", nets.len()),
    }
}

fn pruning_identity(t: &Trained, density_runs: &[(f64, Vec<PolicyAgent>, PruneReport)]) -> Outcome {
    let mut identical = true;
    let data_cfg = PruneConfig::default();
    let mut env = t.env.clone();
    for (k, a) in t.agents.iter().enumerate() {
        let p = a.as_ppo().unwrap();
        let data = build_prune_dataset(&mut env, &t.agents, k, 50, 1).unwrap();
        let s = px_saliency(&p.actor, &data.inputs, &data_cfg.saliency).unwrap();
        let mask = extract_mask(&s.scores, 1.0).unwrap();
        let mut pruned = p.clone();
        pruned.mask = Some(mask.expand(&s, p.actor.num_params()));
        pruned.apply_mask();
        for x in &data.inputs {
            identical &= pruned.actor.forward(x).unwrap() == p.actor.forward(x).unwrap();
        }
    }
    let mut agents = t.agents.clone();
    let densities = vec![Some(1.0); agents.len()];
    let full = prune_and_finetune(&mut env, &mut agents, &densities, &data_cfg, &t.cfg).unwrap();
    identical &= full.pre_reward == full.post_prune_reward;
    let mut violations = 0;
    let mut nonzero = 0;
    for (_, agents, rep) in density_runs {
        violations += rep.mask_violations;
        for a in agents {
            let p = a.as_ppo().unwrap();
            let mask = p.mask.as_ref().unwrap();
            nonzero += mask.iter().zip(&p.actor.params.values).filter(|(k, v)| !**k && **v != 0.0).count();
        }
    }
    Outcome {
        passed: identical && violations == 0 && nonzero == 0,
        detail: format!(
            "density 1 outputs identical: {identical}; non-zero pruned weights after updates: {violations}, at end: {nonzero}"
        ),
    }
}

fn density_trends(t: &Trained) -> (Outcome, Vec<(f64, Vec<PolicyAgent>, PruneReport)>) {
    let mut runs = Vec::new();
    let mut lines = Vec::new();
    let mut passed = true;
    for (density, floor) in [(0.9, 0.9), (0.72, 0.75), (0.33, 0.5)] {
        let mut env = t.env.clone();
        let mut agents = t.agents.clone();
        let densities = vec![Some(density); agents.len()];
        let rep = prune_and_finetune(
            &mut env,
            &mut agents,
            &densities,
            &PruneConfig::default(),
            &t.cfg,
        )
        .unwrap();
        let ratio = rep.post_finetune_reward / rep.pre_reward;
        passed &= ratio >= floor;
        lines.push(format!("{density}: {ratio:.4} (floor {floor})"));
        runs.push((density, agents, rep));
    }
    let masks = |k: usize| -> Vec<&Vec<bool>> { runs.iter().map(|r| r.1[k].as_ppo().unwrap().mask.as_ref().unwrap()).collect() };
    let mut nested = true;
    for k in 0..t.agents.len() {
        let m = masks(k);
        for w in m.windows(2) {
            nested &= w[1].iter().zip(w[0]).all(|(small, big)| !small || *big);
        }
    }
    passed &= nested;
    (
        Outcome {
            passed,
            detail: format!("fine-tuned / dense reward at {}; nested masks: {nested}", lines.join(", ")),
        },
        runs,
    )
}

fn population_trends() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let base = ExperimentSpec {
        algorithms: vec![Algorithm::Oracle, Algorithm::Mappo],
        repetitions: 3,
        eval_episodes: 1,
        ..ExperimentSpec::default()
    };
    let by_rsus = ExperimentSpec {
        name: "rsus".into(),
        sweep: SweepAxes {
            num_rsus: vec![2, 3, 4],
            num_avs: vec![5],
        },
        ..base.clone()
    };
    let by_avs = ExperimentSpec {
        name: "avs".into(),
        sweep: SweepAxes {
            num_rsus: vec![3],
            num_avs: vec![3, 5, 8],
        },
        ..base
    };
    let paths = vec![
        run_experiment(&by_rsus, dir.path(), 1).unwrap(),
        run_experiment(&by_avs, dir.path(), 1).unwrap(),
    ];
    let table = compare_report(&paths).unwrap();
    let checks: Vec<&vean::harness::TrendCheck> = table
        .checks
        .iter()
        .filter(|c| (c.name.starts_with("rsus/") && c.name.contains("in rsus")) || (c.name.starts_with("avs/") && c.name.contains("in avs")))
        .collect();
    let expected = ["equilibrium", "oracle", "mappo"];
    let covered = expected
        .iter()
        .all(|a| checks.iter().filter(|c| c.name.contains(&format!("/{a}:"))).count() == 2);
    let failed = table.rows.iter().filter(|r| r.metric == "failed").count();
    let detail: Vec<String> = checks
        .iter()
        .map(|c| format!("{} {} ({})", if c.passed { "ok" } else { "violated" }, c.name, c.detail))
        .collect();
    Outcome {
        passed: covered && failed == 0 && checks.iter().all(|c| c.passed),
        detail: detail.join("; "),
    }
}

fn main() {
    let mut results = Vec::new();
    let t = Instant::now();
    report(&mut results, "01 follower oracle equivalence", t, follower_oracle());
    let t = Instant::now();
    report(&mut results, "02 leader oracle equivalence", t, leader_oracle());
    let t = Instant::now();
    report(&mut results, "03 equilibrium stability", t, equilibrium_stability());
    let t = Instant::now();
    report(&mut results, "04 standard-function certificate", t, standard_function());
    let t = Instant::now();
    report(&mut results, "05 gradient suites", t, gradient_suites());
    let t = Instant::now();
    report(&mut results, "06 PPO sanity against analytic follower", t, ppo_sanity());
    let t = Instant::now();
    let (ordering, trained) = reward_ordering();
    report(&mut results, "07 reward ordering MABLPPO >= MAPPO > random", t, ordering);
    let t = Instant::now();
    report(&mut results, "08 saliency vs path enumeration", t, px_oracle());
    let t = Instant::now();
    let (trends, runs) = density_trends(&trained);
    let trends_time = t.elapsed();
    let t = Instant::now();
    report(&mut results, "09 pruning identity and mask persistence", t, pruning_identity(&trained, &runs));
    println!(
        "{} 10 density trends and nested masks: {} [{:.1}s]",
        if trends.passed { "PASS" } else { "FAIL" },
        trends.detail,
        trends_time.as_secs_f64()
    );
    results.push(trends.passed);
    let t = Instant::now();
    report(&mut results, "11 population trends", t, population_trends());
    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
