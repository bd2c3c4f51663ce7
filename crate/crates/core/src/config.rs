//! Declarative run configuration (TOML).
//!
//! Unknown keys are rejected and every value has an explicit default, so
//! `RunConfig::default()` rendered with [`RunConfig::template`] is a complete
//! document. Dotted overrides such as `evolution.pop_size=16` are applied to
//! the parsed document before it is deserialised.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distill::LossWeights;
use crate::error::{Error, Result};
use crate::evalengine::{
    CostModel, Device, DevicePool, EngineOptions, HostCpuDevice, LatencyProtocol, RetryPolicy, SchedulerOptions, SimCost,
    SimulatedDevice,
};
use crate::pipeline::{EvolutionConfig, TrainOptions};
use crate::search_space::SearchSpace;
use crate::supernet::{ProgressiveSchedule, SupernetDims, TaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: Vec<usize>,
    pub proj_key_dim: usize,
    pub proj_heads: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: vec![16; 4],
            proj_key_dim: 16,
            proj_heads: 2,
        }
    }
}

/// Iteration budgets of the progressive schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub t_adapt: usize,
    pub t_joint: usize,
    pub t_final: usize,
    /// Budget of the pretraining stage relative to fine-tuning.
    pub pretrain_scale: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            t_adapt: 50,
            t_joint: 200,
            t_final: 400,
            pretrain_scale: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    Simulated,
    HostCpu,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub adapter: AdapterKind,
    pub count: usize,
    pub n_procs: usize,
    pub b_m: usize,
    pub cost: CostModel,
    /// Relative half-width of the uniform latency jitter.
    pub jitter: f64,
    pub interference_ms: f64,
    pub warmup_runs: usize,
    pub timed_runs: usize,
    pub max_retries: usize,
    pub backoff_ms: u64,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            adapter: AdapterKind::Simulated,
            count: 8,
            n_procs: 4,
            b_m: 3,
            cost: CostModel::default(),
            jitter: 0.1,
            interference_ms: 0.2,
            warmup_runs: 5,
            timed_runs: 21,
            max_retries: 2,
            backoff_ms: 1,
        }
    }
}

/// Synthetic workload of the throughput benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub n_tasks: usize,
    pub devices: usize,
    /// Mean device time of one model evaluation, seconds.
    pub task_cost_s: f64,
    /// Relative spread of task costs (uniform, seeded).
    pub cost_spread: f64,
    pub sim: SimCost,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n_tasks: 96,
            devices: 8,
            task_cost_s: 4.0,
            cost_spread: 0.0,
            sim: SimCost::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsistencyConfig {
    pub n_arch: usize,
    pub seeds: usize,
    pub standalone_steps: usize,
    /// Size of the fixed pool used by the architecture-pool strategy.
    pub pool_size: usize,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self {
            n_arch: 16,
            seeds: 5,
            standalone_steps: 2000,
            pool_size: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs/default") }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seed of supernet initialisation and training.
    pub seed: u64,
    pub space: SearchSpace,
    pub model: ModelConfig,
    pub task: TaskSpec,
    pub schedule: ScheduleConfig,
    pub training: TrainOptions,
    pub loss_weights: LossWeights,
    pub evolution: EvolutionConfig,
    pub devices: DeviceConfig,
    pub bench: BenchConfig,
    pub consistency: ConsistencyConfig,
    pub output: OutputConfig,
}

fn field(path: &str, msg: impl std::fmt::Display) -> Error {
    Error::InvalidConfig(format!("{path}: {msg}"))
}

fn section(name: &str, e: Error) -> Error {
    match e {
        Error::InvalidConfig(m) | Error::InvalidSpace(m) => field(name, m),
        other => other,
    }
}

fn parse_override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl RunConfig {
    pub fn template() -> String {
        toml::to_string_pretty(&RunConfig::default()).expect("default config serialises")
    }

    /// Parses `text`, applies `key.path=value` overrides and validates.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("override `{o}` is not of the form key.path=value")))?;
            let parts: Vec<&str> = key.trim().split('.').collect();
            let mut table = &mut doc;
            for p in &parts[..parts.len() - 1] {
                table = table
                    .entry(p.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| field(key, format!("`{p}` is not a section")))?;
            }
            table.insert(parts[parts.len() - 1].to_string(), parse_override_value(raw.trim()));
        }
        let cfg: RunConfig = toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, overrides).map_err(|e| match e {
            Error::InvalidConfig(m) => Error::InvalidConfig(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.space.validate().map_err(|e| section("space", e))?;
        self.task.validate()?;
        self.dims().validate(&self.space).map_err(|e| section("model", e))?;
        self.loss_weights.validate().map_err(|e| match e {
            Error::InvalidWeights(m) => Error::InvalidConfig(format!("loss_weights.{m}")),
            other => other,
        })?;
        let t = &self.training;
        if t.batch_size == 0 {
            return Err(field("training.batch_size", "must be >= 1"));
        }
        if !(t.lr >= 0.0 && t.lr.is_finite()) {
            return Err(field("training.lr", format!("{} must be finite and >= 0", t.lr)));
        }
        if !(t.clip_norm >= 0.0) {
            return Err(field("training.clip_norm", "must be >= 0"));
        }
        if !(self.schedule.pretrain_scale >= 0.0 && self.schedule.pretrain_scale.is_finite()) {
            return Err(field("schedule.pretrain_scale", "must be finite and >= 0"));
        }
        self.evolution.validate()?;
        let d = &self.devices;
        for (name, v) in [("devices.count", d.count), ("devices.n_procs", d.n_procs), ("devices.b_m", d.b_m), ("devices.timed_runs", d.timed_runs)] {
            if v == 0 {
                return Err(field(name, "must be >= 1"));
            }
        }
        if !(0.0..1.0).contains(&d.jitter) {
            return Err(field("devices.jitter", format!("{} outside [0, 1)", d.jitter)));
        }
        if !(d.cost.per_mac_ms >= 0.0 && d.cost.base_ms >= 0.0 && d.interference_ms >= 0.0) {
            return Err(field("devices.cost", "costs must be >= 0"));
        }
        let b = &self.bench;
        if b.n_tasks == 0 || b.devices == 0 || b.sim.lanes == 0 {
            return Err(field("bench", "n_tasks, devices and sim.lanes must be >= 1"));
        }
        if !(b.task_cost_s > 0.0) || !(0.0..1.0).contains(&b.cost_spread) {
            return Err(field("bench", "task_cost_s must be > 0 and cost_spread in [0, 1)"));
        }
        let c = &self.consistency;
        if c.n_arch < 2 || c.seeds == 0 || c.pool_size == 0 {
            return Err(field("consistency", "n_arch >= 2, seeds >= 1 and pool_size >= 1 are required"));
        }
        Ok(())
    }

    pub fn dims(&self) -> SupernetDims {
        SupernetDims {
            image: self.task.image,
            patch: self.task.patch,
            d_model: self.model.d_model.clone(),
            teacher_grid: self.task.teacher_grid(),
            teacher_dim: self.task.teacher_width,
            proj_key_dim: self.model.proj_key_dim,
            proj_heads: self.model.proj_heads,
        }
    }

    pub fn finetune_schedule(&self) -> ProgressiveSchedule {
        let s = &self.schedule;
        ProgressiveSchedule::standard(&self.space, s.t_adapt, s.t_joint, s.t_final)
    }

    pub fn pretrain_schedule(&self) -> ProgressiveSchedule {
        self.finetune_schedule().scaled(self.schedule.pretrain_scale)
    }

    pub fn device_pool(&self) -> Result<DevicePool> {
        let d = &self.devices;
        match d.adapter {
            AdapterKind::Simulated => DevicePool::simulated(
                d.count,
                d.n_procs,
                d.b_m,
                SimulatedDevice {
                    cost: d.cost,
                    jitter: d.jitter,
                    interference_ms: d.interference_ms,
                    seed: self.seed,
                },
            ),
            AdapterKind::HostCpu => DevicePool::new((0..d.count).map(|i| Device::new(i, Box::new(HostCpuDevice))).collect(), d.n_procs, d.b_m),
        }
    }

    pub fn engine_options(&self) -> EngineOptions {
        let d = &self.devices;
        EngineOptions {
            protocol: LatencyProtocol {
                warmup_runs: d.warmup_runs,
                timed_runs: d.timed_runs,
            },
            scheduler: SchedulerOptions {
                retry: RetryPolicy {
                    max_retries: d.max_retries,
                    backoff_ms: d.backoff_ms,
                },
                ..Default::default()
            },
        }
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn digest(&self) -> String {
        let text = toml::to_string(self).expect("config serialises");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_round_trips() {
        let t = RunConfig::template();
        assert_eq!(RunConfig::parse(&t, &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let t = RunConfig::template().replace("[evolution]", "[evolution]\npopulation = 3");
        let e = RunConfig::parse(&t, &[]).unwrap_err().to_string();
        assert!(e.contains("population"), "{e}");
    }

    #[test]
    fn overrides_and_field_errors() {
        let t = RunConfig::template();
        let c = RunConfig::parse(&t, &["evolution.pop_size=16".into(), "output.dir=/tmp/x".into()]).unwrap();
        assert_eq!(c.evolution.pop_size, 16);
        assert_eq!(c.output.dir, PathBuf::from("/tmp/x"));
        let e = RunConfig::parse(&t, &["loss_weights.theta=1.3".into()]).unwrap_err().to_string();
        assert!(e.contains("loss_weights.theta"), "{e}");
        assert!(RunConfig::parse(&t, &["evolution.pop_size=7".into()]).unwrap_err().to_string().contains("evolution.pop_size"));
        assert!(RunConfig::parse(&t, &["nonsense".into()]).is_err());
    }
}
