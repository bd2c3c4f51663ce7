//! Discrete-event model of population evaluation on a device pool.
//!
//! Each process runs on one device and repeatedly takes the next model pool
//! from a shared FIFO queue. Compute work on a device is shared among its
//! busy processes: with `k` of them computing on a device of `lanes` lanes,
//! each progresses at rate `1 / max(1, k / lanes)`. Process start-up, pool
//! loading and per-model overheads are host-side and never slowed down.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::scheduler::TaskRecord;
use crate::error::{Error, Result};

/// Cost parameters of the simulated pool, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimCost {
    /// Concurrent processes a device runs without slowdown.
    pub lanes: usize,
    /// Fixed start-up cost of each worker process.
    pub process_overhead: f64,
    /// Cost of loading one model pool into a process.
    pub pool_overhead: f64,
    /// Host-side cost per evaluated model.
    pub task_overhead: f64,
    /// Synchronisation cost per model in the data-parallel baseline.
    pub sync_overhead: f64,
}

impl Default for SimCost {
    fn default() -> Self {
        Self {
            lanes: 4,
            process_overhead: 2.0,
            pool_overhead: 0.5,
            task_overhead: 0.05,
            sync_overhead: 0.2,
        }
    }
}

impl SimCost {
    pub fn negligible() -> Self {
        Self {
            lanes: 4,
            process_overhead: 0.0,
            pool_overhead: 0.0,
            task_overhead: 0.0,
            sync_overhead: 0.0,
        }
    }
}

/// How a population is spread over the devices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    /// One process on one device evaluates models one by one.
    Sequential,
    /// Every model is split across all devices, with a synchronisation per
    /// model.
    DataParallel,
    /// One long-lived process per device, one model per dispatch.
    PersistentWorkers,
    /// `n_procs` processes per device, `b_m` models per pool.
    Dmmpe { n_procs: usize, b_m: usize },
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Sequential => "sequential",
            Strategy::DataParallel => "data_parallel",
            Strategy::PersistentWorkers => "persistent_workers",
            Strategy::Dmmpe { .. } => "dmmpe",
        }
    }

    /// `(N_p, B_m)` used by the strategy.
    pub fn layout(&self) -> (usize, usize) {
        match *self {
            Strategy::Sequential | Strategy::DataParallel | Strategy::PersistentWorkers => (1, 1),
            Strategy::Dmmpe { n_procs, b_m } => (n_procs, b_m),
        }
    }
}

/// Simulated outcome of evaluating one population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRun {
    pub strategy: Strategy,
    pub n_devices: usize,
    pub makespan: f64,
    /// One record per model, timestamps in simulated seconds.
    pub records: Vec<TaskRecord>,
}

enum Step {
    Host(f64),
    Compute(f64, usize),
}

struct Proc {
    device: usize,
    steps: Vec<Step>,
    current: Option<(Step, f64)>,
    model_start: f64,
}

/// Simulates one evaluation of models with the given per-model device costs.
pub fn simulate(costs: &[f64], n_devices: usize, strategy: Strategy, cost: &SimCost) -> Result<SimRun> {
    if n_devices == 0 || cost.lanes == 0 {
        return Err(Error::InvalidConfig("simulation needs at least one device and lane".into()));
    }
    if costs.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(Error::InvalidConfig("task costs must be finite and non-negative".into()));
    }
    let (n_procs, b_m) = strategy.layout();
    if n_procs == 0 || b_m == 0 {
        return Err(Error::InvalidConfig("N_p and B_m must be positive".into()));
    }
    if strategy == Strategy::DataParallel {
        return Ok(data_parallel(costs, n_devices, cost));
    }
    let devices = if strategy == Strategy::Sequential { 1 } else { n_devices };
    let queue: Vec<Vec<usize>> = (0..costs.len()).collect::<Vec<_>>().chunks(b_m).map(<[usize]>::to_vec).collect();
    let mut next_pool = 0;
    let mut procs: Vec<Proc> = (0..devices * n_procs)
        .map(|p| Proc {
            device: p / n_procs,
            steps: vec![Step::Host(cost.process_overhead)],
            current: None,
            model_start: 0.0,
        })
        .collect();
    let mut records = Vec::with_capacity(costs.len());
    let mut now = 0.0;
    loop {
        // advance idle processes to their next step
        for p in &mut procs {
            while p.current.is_none() {
                if let Some(s) = p.steps.pop() {
                    let amount = match s {
                        Step::Host(a) => a,
                        Step::Compute(a, _) => {
                            p.model_start = now;
                            a
                        }
                    };
                    p.current = Some((s, amount));
                } else if let Some(pool) = queue.get(next_pool) {
                    next_pool += 1;
                    p.steps.push(Step::Host(cost.pool_overhead));
                    for &m in pool {
                        p.steps.push(Step::Host(cost.task_overhead));
                        p.steps.push(Step::Compute(costs[m], m));
                    }
                    p.steps.reverse();
                } else {
                    break;
                }
            }
        }
        let mut busy = vec![0usize; devices];
        for p in &procs {
            if let Some((Step::Compute(..), _)) = p.current {
                busy[p.device] += 1;
            }
        }
        let rate = |p: &Proc| match p.current {
            Some((Step::Compute(..), _)) => 1.0 / (busy[p.device] as f64 / cost.lanes as f64).max(1.0),
            _ => 1.0,
        };
        let dt = procs
            .iter()
            .filter_map(|p| p.current.as_ref().map(|(_, left)| left / rate(p)))
            .fold(f64::INFINITY, f64::min);
        if dt == f64::INFINITY {
            break;
        }
        now += dt;
        let rates: Vec<f64> = procs.iter().map(rate).collect();
        for (pid, p) in procs.iter_mut().enumerate() {
            let Some((_, left)) = p.current.as_mut() else { continue };
            *left -= dt * rates[pid];
            if *left <= 1e-12 * (1.0 + now) {
                if let Some((Step::Compute(_, m), _)) = p.current.take() {
                    records.push(TaskRecord {
                        task: m,
                        kind: "accuracy".into(),
                        worker: pid,
                        device: p.device,
                        attempt: 0,
                        start_s: p.model_start,
                        end_s: now,
                        ok: true,
                        error: None,
                    });
                }
                p.current = None;
            }
        }
    }
    records.sort_by_key(|r| r.task);
    Ok(SimRun {
        strategy,
        n_devices: devices,
        makespan: now,
        records,
    })
}

fn data_parallel(costs: &[f64], n_devices: usize, cost: &SimCost) -> SimRun {
    let mut now = cost.process_overhead;
    let mut records = Vec::with_capacity(costs.len());
    for (m, &c) in costs.iter().enumerate() {
        let start = now;
        now += cost.task_overhead + c / n_devices as f64 + cost.sync_overhead;
        for device in 0..n_devices {
            records.push(TaskRecord {
                task: m,
                kind: "accuracy".into(),
                worker: device,
                device,
                attempt: 0,
                start_s: start,
                end_s: now,
                ok: true,
                error: None,
            });
        }
    }
    SimRun {
        strategy: Strategy::DataParallel,
        n_devices,
        makespan: now,
        records,
    }
}

/// Throughput summary of one evaluated generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    /// Wall time to evaluate the whole population.
    pub time_per_gen: f64,
    /// Fraction of the generation each device had work running.
    pub utilization: BTreeMap<usize, f64>,
    pub speedup: f64,
}

/// Summarises telemetry of one generation against a baseline duration.
/// Failed attempts count towards utilisation.
pub fn throughput_report(records: &[TaskRecord], baseline_time: f64) -> ThroughputReport {
    let t0 = records.iter().map(|r| r.start_s).fold(f64::INFINITY, f64::min).min(0.0);
    let t1 = records.iter().map(|r| r.end_s).fold(0.0, f64::max);
    let span = t1 - t0;
    let mut by_device: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for r in records {
        by_device.entry(r.device).or_default().push((r.start_s, r.end_s));
    }
    let utilization = by_device
        .into_iter()
        .map(|(d, mut iv)| {
            iv.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut covered = 0.0;
            let mut cur: Option<(f64, f64)> = None;
            for (s, e) in iv {
                match cur {
                    Some((cs, ce)) if s <= ce => cur = Some((cs, ce.max(e))),
                    _ => {
                        if let Some((cs, ce)) = cur {
                            covered += ce - cs;
                        }
                        cur = Some((s, e));
                    }
                }
            }
            if let Some((cs, ce)) = cur {
                covered += ce - cs;
            }
            (d, if span > 0.0 { covered / span } else { 0.0 })
        })
        .collect();
    ThroughputReport {
        time_per_gen: span,
        utilization,
        speedup: if span > 0.0 { baseline_time / span } else { 1.0 },
    }
}

/// One row of the throughput table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputRow {
    pub strategy: String,
    pub n_procs: usize,
    pub b_m: usize,
    pub time_per_gen: f64,
    pub speedup: f64,
}

/// Writes `strategy,N_p,B_m,time/G,speedup`.
pub fn write_throughput_csv<W: Write>(rows: &[ThroughputRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "strategy,N_p,B_m,time/G,speedup")?;
    for r in rows {
        writeln!(out, "{},{},{},{:.4},{:.4}", r.strategy, r.n_procs, r.b_m, r.time_per_gen, r.speedup)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_is_sum_of_costs() {
        let costs = [1.0, 2.0, 3.5];
        let c = SimCost::default();
        let run = simulate(&costs, 4, Strategy::Sequential, &c).unwrap();
        let expected = c.process_overhead + c.pool_overhead * 3.0 + c.task_overhead * 3.0 + 6.5;
        assert!((run.makespan - expected).abs() < 1e-9);
        assert_eq!(run.records.len(), 3);
        let rep = throughput_report(&run.records, run.makespan);
        assert!((rep.speedup - 1.0).abs() < 0.2);
    }

    #[test]
    fn lanes_share_compute() {
        let c = SimCost {
            lanes: 2,
            ..SimCost::negligible()
        };
        // four equal tasks, four processes on one 2-lane device: each runs at half rate
        let run = simulate(&[1.0; 4], 1, Strategy::Dmmpe { n_procs: 4, b_m: 1 }, &c).unwrap();
        assert!((run.makespan - 2.0).abs() < 1e-9);
    }

    #[test]
    fn utilization_merges_overlaps() {
        let rec = |device, s, e| TaskRecord {
            task: 0,
            kind: "a".into(),
            worker: 0,
            device,
            attempt: 0,
            start_s: s,
            end_s: e,
            ok: true,
            error: None,
        };
        let rep = throughput_report(&[rec(0, 0.0, 2.0), rec(0, 1.0, 3.0), rec(1, 0.0, 1.0), rec(1, 3.0, 4.0)], 8.0);
        assert_eq!(rep.time_per_gen, 4.0);
        assert_eq!(rep.utilization[&0], 0.75);
        assert_eq!(rep.utilization[&1], 0.5);
        assert_eq!(rep.speedup, 2.0);
    }
}
