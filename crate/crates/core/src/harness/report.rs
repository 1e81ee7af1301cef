use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::metrics::{read_metrics, MetricsRow};
use super::HarnessError;

/// Mean and population std of one summary metric over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub num_rsus: usize,
    pub num_avs: usize,
    pub algorithm: String,
    pub density: Option<f64>,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
    pub checks: Vec<TrendCheck>,
}

impl SummaryTable {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<12} {:>4} {:>4} {:<12} {:>7} {:<24} {:>14} {:>12} {:>4}",
            "experiment", "rsus", "avs", "algorithm", "density", "metric", "mean", "std", "n"
        );
        for r in &self.rows {
            let d = r.density.map_or("-".to_string(), |d| format!("{d:.2}"));
            let _ = writeln!(
                s,
                "{:<12} {:>4} {:>4} {:<12} {:>7} {:<24} {:>14.6} {:>12.6} {:>4}",
                r.experiment, r.num_rsus, r.num_avs, r.algorithm, d, r.metric, r.mean, r.std, r.runs
            );
        }
        for c in &self.checks {
            let _ = writeln!(s, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        s
    }
}

pub fn compare_report(paths: &[PathBuf]) -> Result<SummaryTable, HarnessError> {
    let mut rows = Vec::new();
    for p in paths {
        rows.extend(read_metrics(BufReader::new(File::open(p)?), p)?);
    }
    Ok(compare_rows(&rows))
}

type Key = (String, usize, usize, String, Option<u64>, String);

fn key(r: &MetricsRow) -> Key {
    (
        r.experiment.clone(),
        r.num_rsus,
        r.num_avs,
        r.algorithm.clone(),
        r.density.map(f64::to_bits),
        r.metric.clone(),
    )
}

/// Per-seed values of a summary metric.
fn per_seed<'a>(rows: &'a [MetricsRow], pred: impl Fn(&MetricsRow) -> bool + 'a) -> BTreeMap<u64, f64> {
    rows.iter().filter(|r| r.episode.is_none() && pred(r)).map(|r| (r.seed, r.value)).collect()
}

/// Minimum reward ratio against the dense network for a pruning density.
fn density_floor(d: f64) -> Option<f64> {
    if d >= 0.9 {
        Some(0.9)
    } else if d >= 0.72 {
        Some(0.75)
    } else if d >= 0.33 {
        Some(0.5)
    } else {
        None
    }
}

pub fn compare_rows(rows: &[MetricsRow]) -> SummaryTable {
    let mut groups: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.episode.is_none()) {
        groups.entry(key(r)).or_default().push(r.value);
    }
    let summary: Vec<SummaryRow> = groups
        .into_iter()
        .map(|((experiment, num_rsus, num_avs, algorithm, density, metric), v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            SummaryRow {
                experiment,
                num_rsus,
                num_avs,
                algorithm,
                density: density.map(f64::from_bits),
                metric,
                mean,
                std,
                runs: v.len(),
            }
        })
        .collect();
    let mut checks = Vec::new();
    population_checks(rows, &mut checks);
    ordering_checks(rows, &mut checks);
    density_checks(rows, &mut checks);
    SummaryTable { rows: summary, checks }
}

/// Leader utility against population size, per seed; a majority of seeds
/// must be monotone.
fn population_checks(rows: &[MetricsRow], checks: &mut Vec<TrendCheck>) {
    let mut series: BTreeMap<(String, String, bool, usize), BTreeMap<usize, BTreeMap<u64, f64>>> = BTreeMap::new();
    for r in rows
        .iter()
        .filter(|r| r.episode.is_none() && r.metric == "mean_leader_utility" && r.density.unwrap_or(1.0) == 1.0)
    {
        let by_rsu = (r.experiment.clone(), r.algorithm.clone(), true, r.num_avs);
        series.entry(by_rsu).or_default().entry(r.num_rsus).or_default().insert(r.seed, r.value);
        let by_av = (r.experiment.clone(), r.algorithm.clone(), false, r.num_rsus);
        series.entry(by_av).or_default().entry(r.num_avs).or_default().insert(r.seed, r.value);
    }
    for ((exp, alg, over_rsus, fixed), points) in series {
        if points.len() < 2 {
            continue;
        }
        let seeds: Vec<u64> = points.values().next().map(|m| m.keys().copied().collect()).unwrap_or_default();
        let mut good = 0;
        for s in &seeds {
            let Some(ys) = points.values().map(|m| m.get(s).copied()).collect::<Option<Vec<f64>>>() else {
                continue;
            };
            let ok = ys.windows(2).all(|w| {
                let tol = 1e-9 * w[0].abs().max(1.0);
                if over_rsus {
                    w[1] <= w[0] + tol
                } else {
                    w[1] >= w[0] - tol
                }
            });
            good += ok as usize;
        }
        let (axis, other, trend) = if over_rsus {
            ("rsus", "avs", "non-increasing")
        } else {
            ("avs", "rsus", "non-decreasing")
        };
        let sizes: Vec<usize> = points.keys().copied().collect();
        checks.push(TrendCheck {
            name: format!("{exp}/{alg}: leader utility {trend} in {axis} {sizes:?} ({other}={fixed})"),
            passed: seeds.len() > 0 && 2 * good > seeds.len(),
            detail: format!("{good}/{} seeds monotone", seeds.len()),
        });
    }
}

/// Every seed: MABLPPO >= MAPPO > random and MABLPPO >= 1.2 x random.
fn ordering_checks(rows: &[MetricsRow], checks: &mut Vec<TrendCheck>) {
    let mut points: BTreeMap<(String, usize, usize), ()> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.metric == "final_total_reward") {
        points.insert((r.experiment.clone(), r.num_rsus, r.num_avs), ());
    }
    for (exp, nr, na) in points.into_keys() {
        let get = |alg: &'static str| {
            let exp = exp.clone();
            per_seed(rows, move |r| {
                r.experiment == exp
                    && r.num_rsus == nr
                    && r.num_avs == na
                    && r.algorithm == alg
                    && r.metric == "final_total_reward"
            })
        };
        let (mab, mappo, rnd) = (get("mablppo"), get("mappo"), get("random"));
        if mab.is_empty() || mappo.is_empty() || rnd.is_empty() {
            continue;
        }
        let mut detail = Vec::new();
        let mut passed = true;
        for (seed, m) in &mab {
            let (Some(p), Some(r)) = (mappo.get(seed), rnd.get(seed)) else {
                passed = false;
                continue;
            };
            let ok = m >= p && p > r && *m >= 1.2 * r;
            passed &= ok;
            detail.push(format!("seed {seed}: {m:.3} / {p:.3} / {r:.3}"));
        }
        checks.push(TrendCheck {
            name: format!("{exp} r{nr} v{na}: mablppo >= mappo > random, mablppo >= 1.2 random"),
            passed,
            detail: detail.join("; "),
        });
    }
}

fn density_checks(rows: &[MetricsRow], checks: &mut Vec<TrendCheck>) {
    let mut cases: BTreeMap<(String, usize, usize, String, u64), ()> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.metric == "pruned_reward") {
        let d = r.density.unwrap_or(1.0);
        cases.insert((r.experiment.clone(), r.num_rsus, r.num_avs, r.algorithm.clone(), d.to_bits()), ());
    }
    for (exp, nr, na, alg, bits) in cases.into_keys() {
        let d = f64::from_bits(bits);
        let Some(floor) = density_floor(d) else { continue };
        let base = |metric: &'static str, density: f64| {
            let (exp, alg) = (exp.clone(), alg.clone());
            per_seed(rows, move |r| {
                r.experiment == exp
                    && r.num_rsus == nr
                    && r.num_avs == na
                    && r.algorithm == alg
                    && r.metric == metric
                    && r.density == Some(density)
            })
        };
        let dense = base("eval_total_reward", 1.0);
        let pruned = base("pruned_reward", d);
        let mean = |m: &BTreeMap<u64, f64>| m.values().sum::<f64>() / m.len().max(1) as f64;
        let ratio = mean(&pruned) / mean(&dense);
        checks.push(TrendCheck {
            name: format!("{exp}/{alg} r{nr} v{na}: density {d} keeps >= {floor} of dense reward"),
            passed: ratio >= floor,
            detail: format!("ratio {ratio:.4}"),
        });
    }
}
