use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{write_metrics, MetricsRow, METRICS_SCHEMA_VERSION};
use super::{ExperimentSpec, HarnessError};
use crate::env::{EnvConfig, MarketEnv};
use crate::game::{solve_equilibrium, SolverOptions};
use crate::marl::{build_agents, evaluate, train, Algorithm, TrainConfig};
use crate::pruning::prune_and_finetune;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub num_rsus: usize,
    pub num_avs: usize,
    pub seed: u64,
}

impl SweepPoint {
    fn file_name(&self) -> String {
        format!("r{}_v{}_s{}.csv", self.num_rsus, self.num_avs, self.seed)
    }
}

struct Rows<'a> {
    spec: &'a ExperimentSpec,
    point: SweepPoint,
    rows: Vec<MetricsRow>,
}

impl Rows<'_> {
    fn push(&mut self, algorithm: &str, density: Option<f64>, episode: Option<usize>, metric: &str, value: f64) {
        self.rows.push(MetricsRow {
            schema_version: METRICS_SCHEMA_VERSION,
            experiment: self.spec.name.clone(),
            seed: self.point.seed,
            num_rsus: self.point.num_rsus,
            num_avs: self.point.num_avs,
            algorithm: algorithm.into(),
            density,
            episode,
            metric: metric.into(),
            value,
        });
    }

    fn fail(&mut self, stage: &str, err: &HarnessError) {
        log::error!(
            "{} r{} v{} seed {}: {stage} failed: {err}",
            self.spec.name,
            self.point.num_rsus,
            self.point.num_avs,
            self.point.seed
        );
        self.push(stage, None, None, "failed", 1.0);
    }
}

fn run_algorithm(
    out: &mut Rows,
    alg: Algorithm,
    env_cfg: &EnvConfig,
    cfg: &TrainConfig,
) -> Result<(), HarnessError> {
    let spec = out.spec;
    let g = spec.instance(out.point.num_rsus, out.point.num_avs)?;
    let mut env = MarketEnv::new(env_cfg.clone(), g.clone())?;
    let mut agents = build_agents(alg, &g, env.config(), cfg)?;
    let report = train(&mut env, &mut agents, cfg)?;
    let dense = alg.is_learned().then_some(1.0);
    for (e, total) in report.total_rewards().into_iter().enumerate() {
        out.push(alg.name(), dense, Some(e), "total_reward", total);
    }
    out.push(alg.name(), dense, None, "final_total_reward", report.final_mean_total(spec.final_window));
    let eval = evaluate(&mut env, &agents, spec.eval_episodes)?;
    out.push(alg.name(), dense, None, "eval_total_reward", eval.mean_total_reward);
    out.push(alg.name(), dense, None, "mean_leader_utility", eval.mean_leader_utility);
    out.push(alg.name(), dense, None, "mean_follower_utility", eval.mean_follower_utility);
    if !alg.is_learned() {
        return Ok(());
    }
    for &d in &spec.densities {
        let mut pruned = agents.clone();
        let densities = vec![Some(d); pruned.len()];
        let prune_cfg = crate::pruning::PruneConfig {
            eval_episodes: spec.eval_episodes,
            ..spec.prune.clone()
        };
        match prune_and_finetune(&mut env, &mut pruned, &densities, &prune_cfg, cfg) {
            Ok(r) => {
                out.push(alg.name(), Some(d), None, "post_prune_reward", r.post_prune_reward);
                out.push(alg.name(), Some(d), None, "pruned_reward", r.post_finetune_reward);
                out.push(alg.name(), Some(d), None, "mask_violations", r.mask_violations as f64);
            }
            Err(e) => out.fail(&format!("prune_{}", alg.name()), &e.into()),
        }
    }
    Ok(())
}

/// Rows of one sweep point. Stage failures become `failed` rows.
pub fn run_point(spec: &ExperimentSpec, point: SweepPoint) -> Vec<MetricsRow> {
    let mut out = Rows {
        spec,
        point,
        rows: Vec::new(),
    };
    let env_cfg = EnvConfig {
        rng_seed: point.seed,
        ..spec.env.clone()
    };
    let cfg = TrainConfig {
        seed: point.seed,
        ..spec.train.clone()
    };
    let eq = spec
        .instance(point.num_rsus, point.num_avs)
        .and_then(|g| Ok((solve_equilibrium(&g, &SolverOptions::default())?, g)));
    match eq {
        Ok((eq, g)) => {
            let lead = eq.leader_utilities(&g);
            let follow = eq.follower_utilities(&g);
            out.push("equilibrium", None, None, "mean_leader_utility", mean(&lead));
            out.push("equilibrium", None, None, "mean_follower_utility", mean(&follow));
            out.push("equilibrium", None, None, "solver_iterations", eq.iterations as f64);
        }
        Err(e) => out.fail("equilibrium", &e),
    }
    for &alg in &spec.algorithms {
        if let Err(e) = run_algorithm(&mut out, alg, &env_cfg, &cfg) {
            out.fail(alg.name(), &e);
        }
    }
    out.rows
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Runs every sweep point on `workers` threads, writes
/// `<out_dir>/<name>/points/<point>.csv` per point and their concatenation
/// in sweep order to `<out_dir>/<name>/metrics.csv`, whose path is returned.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path, workers: usize) -> Result<PathBuf, HarnessError> {
    spec.validate()?;
    let dir = out_dir.join(&spec.name);
    let points_dir = dir.join("points");
    std::fs::create_dir_all(&points_dir)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
    let points = spec.points();
    let results: Vec<Result<Vec<MetricsRow>, HarnessError>> = pool.install(|| {
        points
            .par_iter()
            .map(|p| {
                let rows = run_point(spec, *p);
                let f = File::create(points_dir.join(p.file_name()))?;
                write_metrics(BufWriter::new(f), &rows)?;
                Ok(rows)
            })
            .collect()
    });
    let mut all = Vec::new();
    for r in results {
        all.extend(r?);
    }
    let path = dir.join("metrics.csv");
    write_metrics(BufWriter::new(File::create(&path)?), &all)?;
    Ok(path)
}
