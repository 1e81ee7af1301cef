use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use vean::env::MarketEnv;
use vean::game::{certify_standard_function, deviation_scan, solve_equilibrium, SolverOptions};
use vean::harness::{
    compare_report, load_agents, run_experiment, save_agents, ExperimentSpec, RunMetadata,
};
use vean::marl::{build_agents, evaluate, train, Algorithm};
use vean::pruning::{prune_and_finetune, tier_density, TierTable};

#[derive(Parser)]
#[command(name = "vean", version, about = "Bandwidth-pricing market solver, MARL trainer and actor pruner")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Overrides the seed of single-run commands.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Exit non-zero when a certificate or trend check fails.
    #[arg(long, global = true)]
    assert: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the analytic equilibrium of the config's first market.
    SolveEq { config: PathBuf },
    /// Check the standard-function properties of the leader response.
    Certify {
        config: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Train one roster and save its networks.
    Train {
        config: PathBuf,
        #[arg(long, value_enum, default_value = "mablppo")]
        algorithm: AlgArg,
    },
    /// Prune every actor of a checkpoint and fine-tune.
    Prune {
        checkpoint: PathBuf,
        #[arg(long, conflicts_with = "tops", required_unless_present = "tops")]
        density: Option<f64>,
        /// Compute capability, mapped to a density through the tier table.
        #[arg(long)]
        tops: Option<f64>,
        /// Tier breakpoints `C1,C2`.
        #[arg(long, value_delimiter = ',')]
        tiers: Option<Vec<f64>>,
    },
    /// Mean-action evaluation of saved rosters.
    Evaluate {
        #[arg(required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long, default_value_t = 2)]
        episodes: usize,
    },
    /// Run a sweep and summarise it.
    Experiment { spec: PathBuf },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum AlgArg {
    Mablppo,
    Mappo,
}

impl From<AlgArg> for Algorithm {
    fn from(a: AlgArg) -> Self {
        match a {
            AlgArg::Mablppo => Algorithm::Mablppo,
            AlgArg::Mappo => Algorithm::Mappo,
        }
    }
}

fn load_spec(path: &Path, seed: Option<u64>) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::load(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(s) = seed {
        spec.seeds = vec![s];
        spec.repetitions = 1;
    }
    Ok(spec)
}

fn out_file(c: &Common, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&c.out_dir)?;
    Ok(c.out_dir.join(name))
}

fn run(cli: Cli) -> Result<bool> {
    let c = &cli.common;
    match cli.cmd {
        Cmd::SolveEq { config } => {
            let spec = load_spec(&config, c.seed)?;
            let p = spec.points().first().copied().context("spec has an empty sweep")?;
            let g = spec.instance(p.num_rsus, p.num_avs)?;
            let eq = solve_equilibrium(&g, &SolverOptions::default())?;
            let scan = deviation_scan(&g, &eq, 1000);
            println!("{}", eq.to_json()?);
            println!(
                "largest unilateral gain on a 1000-point grid: leaders {:e}, followers {:e}",
                scan.max_leader_gain, scan.max_follower_gain
            );
            eq.write_csv(BufWriter::new(File::create(out_file(c, "equilibrium.csv")?)?))?;
            Ok(true)
        }
        Cmd::Certify { config, samples } => {
            let spec = load_spec(&config, c.seed)?;
            let p = spec.points().first().copied().context("spec has an empty sweep")?;
            let g = spec.instance(p.num_rsus, p.num_avs)?;
            let report = certify_standard_function(&g, samples, c.seed.unwrap_or(0));
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(report.holds())
        }
        Cmd::Train { config, algorithm } => {
            let spec = load_spec(&config, c.seed)?;
            let p = spec.points().first().copied().context("spec has an empty sweep")?;
            let g = spec.instance(p.num_rsus, p.num_avs)?;
            let mut env_cfg = spec.env.clone();
            let mut train_cfg = spec.train.clone();
            env_cfg.rng_seed = p.seed;
            train_cfg.seed = p.seed;
            let alg = Algorithm::from(algorithm);
            let mut env = MarketEnv::new(env_cfg.clone(), g.clone())?;
            let mut agents = build_agents(alg, &g, env.config(), &train_cfg)?;
            let report = train(&mut env, &mut agents, &train_cfg)?;
            report.write_csv(BufWriter::new(File::create(out_file(c, "train.csv")?)?))?;
            let ckpt = out_file(c, "agents.ckpt")?;
            let meta = RunMetadata {
                algorithm: alg,
                game: g,
                env: env_cfg,
                train: train_cfg,
            };
            save_agents(&ckpt, &agents, &meta)?;
            println!(
                "final mean total reward {:.4} over the last 100 episodes; saved {}",
                report.final_mean_total(100),
                ckpt.display()
            );
            Ok(true)
        }
        Cmd::Prune {
            checkpoint,
            density,
            tops,
            tiers,
        } => {
            let (meta, mut agents) = load_agents(&checkpoint)?;
            let density = match (density, tops) {
                (Some(d), _) => d,
                (None, Some(t)) => {
                    let table = match tiers {
                        Some(b) => TierTable::with_breakpoints(b)?,
                        None => TierTable::default(),
                    };
                    tier_density(t, &table)?
                }
                (None, None) => bail!("either --density or --tops is required"),
            };
            let mut env = MarketEnv::new(meta.env.clone(), meta.game.clone())?;
            let mut train_cfg = meta.train.clone();
            if let Some(s) = c.seed {
                train_cfg.seed = s;
            }
            let densities = vec![Some(density); agents.len()];
            let report = prune_and_finetune(&mut env, &mut agents, &densities, &Default::default(), &train_cfg)?;
            std::fs::write(out_file(c, "prune_report.json")?, report.to_json()?)?;
            save_agents(&out_file(c, "pruned.ckpt")?, &agents, &meta)?;
            println!(
                "density {density}: reward {:.4} dense, {:.4} pruned, {:.4} fine-tuned",
                report.pre_reward, report.post_prune_reward, report.post_finetune_reward
            );
            Ok(report.mask_violations == 0)
        }
        Cmd::Evaluate { checkpoints, episodes } => {
            for path in checkpoints {
                let (meta, agents) = load_agents(&path)?;
                let mut env = MarketEnv::new(meta.env.clone(), meta.game.clone())?;
                let ev = evaluate(&mut env, &agents, episodes)?;
                println!(
                    "{}: {} total reward {:.4}, leader utility {:.4}, follower utility {:.4}",
                    path.display(),
                    meta.algorithm.name(),
                    ev.mean_total_reward,
                    ev.mean_leader_utility,
                    ev.mean_follower_utility
                );
            }
            Ok(true)
        }
        Cmd::Experiment { spec } => {
            let spec = load_spec(&spec, c.seed)?;
            let metrics = run_experiment(&spec, &c.out_dir, c.workers)?;
            let table = compare_report(&[metrics.clone()])?;
            println!("{}", table.to_text());
            println!("metrics: {}", metrics.display());
            Ok(table.all_passed())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let strict = cli.common.assert;
    match run(cli) {
        Ok(ok) if ok || !strict => ExitCode::SUCCESS,
        Ok(_) => {
            eprintln!("assertion failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
