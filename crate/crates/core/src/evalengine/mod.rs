//! Parallel evaluation of a population on a device pool.
//!
//! Configurations are grouped into model pools; worker threads (`N_p` per
//! device) pull accuracy tasks (one per pool) and latency tasks (one per
//! configuration) from a shared bounded queue. Accuracy work may share a
//! device; latency is measured only under an exclusive device lease. Results
//! are reassembled by population index, so the fitness matrix does not
//! depend on scheduling.

mod device;
mod scheduler;
mod simulate;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use device::{
    measure_latency, median, stable_hash, CostModel, Device, DeviceAdapter, DeviceLease, HostCpuDevice, Job, LatencyProtocol,
    LeaseRecord, Occupancy, SimulatedDevice,
};
pub use scheduler::{run_tasks, write_jsonl, FaultPlan, Outcome, RetryPolicy, RunOutput, SchedulerOptions, TaskRecord, WorkerCtx};
pub use simulate::{simulate, throughput_report, write_throughput_csv, SimCost, SimRun, Strategy, ThroughputReport, ThroughputRow};

use crate::error::{Error, Result};
use crate::moea::{FitnessMatrix, ObjectiveVector};
use crate::search_space::ArchConfig;
use crate::supernet::{expanded_width, validation_error, Sample, SupernetDims, SupernetParams};

/// Configurations evaluated together by one process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPool {
    pub id: usize,
    /// `(population index, config)` pairs.
    pub members: Vec<(usize, ArchConfig)>,
}

/// Splits `configs` into consecutive pools of at most `b_m`.
pub fn partition_pools(configs: &[ArchConfig], b_m: usize) -> Result<Vec<ModelPool>> {
    if b_m == 0 {
        return Err(Error::InvalidConfig("models per process must be at least 1".into()));
    }
    if configs.is_empty() {
        return Err(Error::InvalidInput("no configurations to partition".into()));
    }
    Ok(configs
        .chunks(b_m)
        .enumerate()
        .map(|(k, chunk)| ModelPool {
            id: k,
            members: chunk.iter().enumerate().map(|(j, c)| (k * b_m + j, c.clone())).collect(),
        })
        .collect())
}

/// Closed-form multiply-accumulate count of one batch-1 forward of `cfg`.
pub fn count_macs(cfg: &ArchConfig, dims: &SupernetDims) -> u64 {
    let p = dims.n_tokens() as u64;
    let pp = dims.patch_len() as u64;
    let mut macs = p * pp * dims.d_model[0] as u64;
    for (s, st) in cfg.stages.iter().enumerate() {
        let d = dims.d_model[s];
        if s > 0 {
            macs += p * (dims.d_model[s - 1] * d) as u64;
        }
        let (n, e, h) = (st.d_state as u64, expanded_width(st.ssd_expand, d) as u64, expanded_width(st.mlp_ratio, d) as u64);
        let d = d as u64;
        let block = d * e + e * n + n * n + n * d + 2 * d * h;
        macs += st.depth as u64 * p * block;
    }
    let dl = dims.d_last() as u64;
    macs + 3 * p * dl * dl + 2 * p * p * dl + p * dl * pp
}

/// Devices plus the process layout used on them.
#[derive(Debug, Clone)]
pub struct DevicePool {
    pub devices: Vec<Arc<Device>>,
    /// Worker processes per device (`N_p`).
    pub n_procs: usize,
    /// Models per pool (`B_m`).
    pub b_m: usize,
}

impl DevicePool {
    pub fn new(devices: Vec<Arc<Device>>, n_procs: usize, b_m: usize) -> Result<Self> {
        if devices.is_empty() {
            return Err(Error::InvalidConfig("devices.count must be at least 1".into()));
        }
        if n_procs == 0 {
            return Err(Error::InvalidConfig("devices.n_procs must be at least 1".into()));
        }
        if b_m == 0 {
            return Err(Error::InvalidConfig("devices.b_m must be at least 1".into()));
        }
        Ok(Self { devices, n_procs, b_m })
    }

    /// `count` identical simulated devices.
    pub fn simulated(count: usize, n_procs: usize, b_m: usize, device: SimulatedDevice) -> Result<Self> {
        let devices = (0..count).map(|i| Device::new(i, Box::new(device))).collect();
        Self::new(devices, n_procs, b_m)
    }

    /// Device index of every worker.
    pub fn worker_devices(&self) -> Vec<usize> {
        (0..self.devices.len() * self.n_procs).map(|w| w / self.n_procs).collect()
    }

    pub fn lease_log(&self) -> Vec<LeaseRecord> {
        self.devices.iter().flat_map(|d| d.lease_log()).collect()
    }
}

#[derive(Debug, Clone)]
pub enum EvalTask {
    Accuracy(ModelPool),
    Latency { index: usize, cfg: ArchConfig },
}

impl EvalTask {
    pub fn kind(&self) -> &'static str {
        match self {
            EvalTask::Accuracy(_) => "accuracy",
            EvalTask::Latency { .. } => "latency",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvalResult {
    Accuracy(Vec<(usize, f64)>),
    Latency { index: usize, latency_ms: f64, macs: u64 },
}

/// Engine knobs shared by every generation.
#[derive(Debug, Clone, Default)]
pub struct EngineOptions {
    pub protocol: LatencyProtocol,
    pub scheduler: SchedulerOptions,
}

/// Everything produced by evaluating one population.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub fitness: FitnessMatrix,
    /// Indices that carry a penalty row.
    pub failed: Vec<usize>,
    pub records: Vec<TaskRecord>,
    pub retries: usize,
}

pub type IndexMap<T> = BTreeMap<usize, Outcome<T>>;

/// Per-index outcomes of one population evaluation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultMaps {
    pub accuracy: IndexMap<f64>,
    pub latency: IndexMap<f64>,
    pub macs: IndexMap<u64>,
}

/// Validation error of every pooled config; each pool is one task.
pub fn run_accuracy_eval(pools: &[ModelPool], snapshot: &SupernetParams, val: &[Sample], pool: &DevicePool, opts: &SchedulerOptions) -> Result<(IndexMap<f64>, RunOutput<Vec<(usize, f64)>>)> {
    let out = run_tasks(pools, &pool.worker_devices(), |_| "accuracy".into(), opts, |ctx, mp| {
        let _occupied = pool.devices[ctx.device].occupy();
        mp.members.iter().map(|(i, c)| Ok((*i, validation_error(snapshot, c, val)?))).collect::<Result<Vec<_>>>()
    })?;
    let mut map = IndexMap::new();
    for (mp, o) in pools.iter().zip(&out.outcomes) {
        match o {
            Ok(v) => map.extend(v.iter().map(|&(i, e)| (i, Ok(e)))),
            Err(e) => map.extend(mp.members.iter().map(|(i, _)| (*i, Err(e.clone())))),
        }
    }
    Ok((map, out))
}

/// Evaluates `configs` (error, latency, MACs) on `pool`.
pub fn evaluate(configs: &[ArchConfig], snapshot: &SupernetParams, val: &[Sample], pool: &DevicePool, opts: &EngineOptions) -> Result<Evaluation> {
    let (maps, records, retries) = evaluate_maps(configs, snapshot, val, pool, opts)?;
    let (fitness, failed) = assemble_fitness(&maps, configs.len())?;
    Ok(Evaluation {
        fitness,
        failed,
        records,
        retries,
    })
}

/// Dispatches accuracy and latency tasks through one queue and collects
/// per-index outcomes.
pub fn evaluate_maps(configs: &[ArchConfig], snapshot: &SupernetParams, val: &[Sample], pool: &DevicePool, opts: &EngineOptions) -> Result<(ResultMaps, Vec<TaskRecord>, usize)> {
    let pools = partition_pools(configs, pool.b_m)?;
    let mut tasks: Vec<EvalTask> = pools.iter().cloned().map(EvalTask::Accuracy).collect();
    tasks.extend(configs.iter().enumerate().map(|(index, cfg)| EvalTask::Latency { index, cfg: cfg.clone() }));
    let out = run_tasks(&tasks, &pool.worker_devices(), |t| t.kind().into(), &opts.scheduler, |ctx, task| {
        let device = &pool.devices[ctx.device];
        match task {
            EvalTask::Accuracy(mp) => {
                let _occupied = device.occupy();
                let errs = mp.members.iter().map(|(i, c)| Ok((*i, validation_error(snapshot, c, val)?))).collect::<Result<_>>()?;
                Ok(EvalResult::Accuracy(errs))
            }
            EvalTask::Latency { index, cfg } => {
                let macs = count_macs(cfg, &snapshot.dims);
                let lease = device.lease()?;
                let latency_ms = measure_latency(device, &lease, cfg, macs, snapshot, &opts.protocol)?;
                Ok(EvalResult::Latency { index: *index, latency_ms, macs })
            }
        }
    })?;
    let mut maps = ResultMaps::default();
    for (task, o) in tasks.iter().zip(out.outcomes) {
        match (task, o) {
            (_, Ok(EvalResult::Accuracy(v))) => maps.accuracy.extend(v.into_iter().map(|(i, e)| (i, Ok(e)))),
            (_, Ok(EvalResult::Latency { index, latency_ms, macs })) => {
                maps.latency.insert(index, Ok(latency_ms));
                maps.macs.insert(index, Ok(macs));
            }
            (EvalTask::Accuracy(mp), Err(e)) => maps.accuracy.extend(mp.members.iter().map(|(i, _)| (*i, Err(e.clone())))),
            (EvalTask::Latency { index, .. }, Err(e)) => {
                maps.latency.insert(*index, Err(e.clone()));
                maps.macs.insert(*index, Err(e));
            }
        }
    }
    Ok((maps, out.records, out.retries))
}

/// Objective vector given to configurations whose evaluation failed. It is
/// dominated by every real vector.
pub fn penalty_row() -> ObjectiveVector {
    ObjectiveVector::new(f64::MAX, f64::MAX, f64::MAX)
}

/// Builds row `i = (err_i, latency_i, macs_i)` for `i in 0..n`. Indices with a
/// recorded failure in any map get [`penalty_row`] and are returned in the
/// failed list.
pub fn assemble_fitness(maps: &ResultMaps, n: usize) -> Result<(FitnessMatrix, Vec<usize>)> {
    let mut rows = Vec::with_capacity(n);
    let mut failed = Vec::new();
    for i in 0..n {
        let missing = |what: &str| Error::IncompleteEvaluation(format!("no {what} result for index {i}"));
        let acc = maps.accuracy.get(&i).ok_or_else(|| missing("accuracy"))?;
        let lat = maps.latency.get(&i).ok_or_else(|| missing("latency"))?;
        let macs = maps.macs.get(&i).ok_or_else(|| missing("MACs"))?;
        match (acc, lat, macs) {
            (Ok(e), Ok(t), Ok(m)) if e.is_finite() && t.is_finite() => rows.push(ObjectiveVector::new(*e, *t, *m as f64)),
            _ => {
                rows.push(penalty_row());
                failed.push(i);
            }
        }
    }
    Ok((FitnessMatrix::new(rows)?, failed))
}
