//! Post-hoc metrics: rank correlation, parameter efficiency, hypervolume
//! trajectories and the throughput ablation.

mod consistency;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use consistency::{
    consistency_experiment, sample_architectures, standalone_scores, train_strategy, ConsistencyReport, ConsistencySetup,
    Exclusion, ScatterPoint, StrategySummary, TrainingStrategy,
};

use crate::error::{Error, Result};
use crate::evalengine::{simulate, SimCost, Strategy, ThroughputRow};
use crate::pipeline::SearchState;

/// Kendall rank correlation with the tau-b tie correction.
///
/// When either ranking is constant the coefficient is undefined and `0.0`
/// (no association) is returned.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("rankings of length {} and {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::InvalidInput("kendall tau needs at least two items".into()));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::InvalidInput("ranking contains NaN".into()));
    }
    let (mut concordant, mut discordant, mut ties_a, mut ties_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let da = a[i].partial_cmp(&a[j]).unwrap();
            let db = b[i].partial_cmp(&b[j]).unwrap();
            use std::cmp::Ordering::Equal;
            match (da, db) {
                (Equal, Equal) => {}
                (Equal, _) => ties_a += 1,
                (_, Equal) => ties_b += 1,
                _ if da == db => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n1 = (concordant + discordant + ties_a) as f64;
    let n2 = (concordant + discordant + ties_b) as f64;
    if n1 == 0.0 || n2 == 0.0 {
        return Ok(0.0);
    }
    Ok((concordant - discordant) as f64 / (n1 * n2).sqrt())
}

/// Normalised information density: performance per million parameters.
pub fn nid(performance: f64, params_millions: f64) -> Result<f64> {
    if !(params_millions > 0.0) || !params_millions.is_finite() {
        return Err(Error::InvalidInput(format!("parameter count {params_millions} must be positive")));
    }
    Ok(performance / params_millions)
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Long-format `(generation, metric, value)` rows of a search run.
pub fn trajectory_metrics(state: &SearchState) -> Vec<(usize, &'static str, f64)> {
    let mut rows = vec![(0, "archive_hv", state.initial_hv)];
    for r in &state.trajectory {
        rows.push((r.generation, "archive_hv", r.archive_hv));
        rows.push((r.generation, "archive_size", r.archive_size as f64));
        rows.push((r.generation, "front0_size", r.front0.len() as f64));
        rows.push((r.generation, "evaluations", r.evaluations as f64));
        rows.push((r.generation, "dispatched", r.dispatched as f64));
        rows.push((r.generation, "failed", r.failed.len() as f64));
        for (k, name) in ["best_err", "best_latency_ms", "best_macs"].into_iter().enumerate() {
            let best = r.fitness.rows.iter().map(|o| o.get(k)).fold(f64::INFINITY, f64::min);
            rows.push((r.generation, name, best));
        }
    }
    rows
}

pub fn write_long_csv<W: Write>(rows: &[(usize, &str, f64)], mut out: W) -> std::io::Result<()> {
    writeln!(out, "generation,metric,value")?;
    for (g, m, v) in rows {
        writeln!(out, "{g},{m},{v}")?;
    }
    Ok(())
}

/// Synthetic population used by the throughput ablation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub n_tasks: usize,
    /// Mean device seconds per model.
    pub task_cost_s: f64,
    /// Costs are uniform in `task_cost_s * [1 - spread, 1 + spread]`.
    pub cost_spread: f64,
    pub seed: u64,
}

impl Workload {
    pub fn costs(&self) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.n_tasks)
            .map(|_| {
                let u = if self.cost_spread > 0.0 {
                    rng.gen_range(-self.cost_spread..self.cost_spread)
                } else {
                    0.0
                };
                self.task_cost_s * (1.0 + u)
            })
            .collect()
    }
}

/// Baselines plus a grid of process and pool sizes.
pub fn default_strategies() -> Vec<Strategy> {
    let mut s = vec![Strategy::Sequential, Strategy::DataParallel, Strategy::PersistentWorkers];
    for (n_procs, b_m) in [(1, 12), (2, 6), (3, 4), (4, 3), (6, 2)] {
        s.push(Strategy::Dmmpe { n_procs, b_m });
    }
    s
}

/// Simulates `strategies` on one workload. Speedups are relative to the
/// sequential run, which is always included; rows are sorted by time per
/// generation, fastest first.
pub fn throughput_ablation(workload: &Workload, n_devices: usize, strategies: &[Strategy], cost: &SimCost) -> Result<Vec<ThroughputRow>> {
    let costs = workload.costs();
    let baseline = simulate(&costs, n_devices, Strategy::Sequential, cost)?.makespan;
    let mut list = strategies.to_vec();
    if !list.contains(&Strategy::Sequential) {
        list.insert(0, Strategy::Sequential);
    }
    let mut rows = list
        .iter()
        .map(|&s| {
            let run = simulate(&costs, n_devices, s, cost)?;
            let (n_procs, b_m) = s.layout();
            Ok(ThroughputRow {
                strategy: s.name().to_string(),
                n_procs,
                b_m,
                time_per_gen: run.makespan,
                speedup: baseline / run.makespan,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| {
        a.time_per_gen
            .total_cmp(&b.time_per_gen)
            .then_with(|| a.strategy.cmp(&b.strategy))
            .then_with(|| (a.n_procs, a.b_m).cmp(&(b.n_procs, b.b_m)))
    });
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_b_with_ties() {
        // Pairs: (0,1) tie in a, (0,2) C, (1,2) C -> n1 = 2, n2 = 3.
        let t = kendall_tau(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((t - 2.0 / 6f64.sqrt()).abs() < 1e-15);
        assert_eq!(kendall_tau(&[1.0, 1.0], &[1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn mean_std_sample() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
