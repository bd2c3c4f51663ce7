//! Ranking consistency between supernet proxies and standalone training.

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{kendall_tau, mean_std};
use crate::distill::LossWeights;
use crate::error::{Error, Result};
use crate::evalengine::{run_tasks, DevicePool, SchedulerOptions};
use crate::pipeline::{run_stage, train_loop, Stage, TrainOptions};
use crate::search_space::{decode, random_genotype, ArchConfig, SearchSpace};
use crate::supernet::{
    init_maximal, validation_error, GtLoss, Mode, MicroTask, Objective, ProgressiveSchedule, SupernetDims, SupernetParams, TrainMask,
};

/// How the shared weights are trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingStrategy {
    /// Progressive schedule in both stages, distillation in fine-tuning.
    Progressive,
    /// Uniform sampling over the whole space for the same budget.
    RandomSampling,
    /// Uniform sampling from a fixed random pool of architectures.
    ArchitecturePool,
}

impl TrainingStrategy {
    pub const ALL: [TrainingStrategy; 3] = [
        TrainingStrategy::Progressive,
        TrainingStrategy::RandomSampling,
        TrainingStrategy::ArchitecturePool,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrainingStrategy::Progressive => "progressive",
            TrainingStrategy::RandomSampling => "random_sampling",
            TrainingStrategy::ArchitecturePool => "architecture_pool",
        }
    }
}

impl std::str::FromStr for TrainingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown training strategy `{s}`")))
    }
}

/// Everything the experiment needs besides the device pool.
#[derive(Debug, Clone)]
pub struct ConsistencySetup<'a> {
    pub space: &'a SearchSpace,
    pub dims: &'a SupernetDims,
    pub task: &'a MicroTask,
    pub pretrain: &'a ProgressiveSchedule,
    pub finetune: &'a ProgressiveSchedule,
    pub training: TrainOptions,
    pub weights: LossWeights,
    pub n_arch: usize,
    pub standalone_steps: usize,
    pub pool_size: usize,
}

fn stage_seed(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// `n` distinct architectures drawn uniformly from the space.
pub fn sample_architectures(space: &SearchSpace, n: usize, seed: u64) -> Result<Vec<ArchConfig>> {
    if (n as u128) > space.size() {
        return Err(Error::InvalidInput(format!("cannot sample {n} distinct architectures from {}", space.size())));
    }
    let mut rng = stage_seed(seed, 1);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let cfg = decode(&random_genotype(space, &mut rng), space)?;
        if seen.insert(cfg.label()) {
            out.push(cfg);
        }
    }
    Ok(out)
}

/// Trains a supernet from the seed's initialisation with one strategy.
/// Every strategy gets the same number of steps in both stages.
pub fn train_strategy(strategy: TrainingStrategy, setup: &ConsistencySetup<'_>, seed: u64) -> Result<SupernetParams> {
    let s = setup;
    let mut params = init_maximal(s.space, s.dims, &mut stage_seed(seed, 2))?;
    let mut rng = stage_seed(seed, 3);
    let stages = [(Stage::Pretrain, s.pretrain), (Stage::Finetune, s.finetune)];
    match strategy {
        TrainingStrategy::Progressive => {
            for (stage, schedule) in stages {
                run_stage(stage, &mut params, schedule, 0, &s.task.train, &s.training, s.weights, &mut rng)?;
            }
        }
        TrainingStrategy::RandomSampling => {
            for (stage, schedule) in stages {
                let uniform = ProgressiveSchedule::uniform(s.space, schedule.total_iters());
                run_stage(stage, &mut params, &uniform, 0, &s.task.train, &s.training, s.weights, &mut rng)?;
            }
        }
        TrainingStrategy::ArchitecturePool => {
            let pool = sample_architectures(s.space, s.pool_size.min(s.space.size() as usize), seed ^ 0xA4C4)?;
            for (stage, schedule) in stages {
                let objective = stage.objective(&s.training, s.weights);
                train_loop(&mut params, stage, 0..schedule.total_iters(), &s.task.train, &objective, &s.training, &mut rng, |_, rng| {
                    (pool.choose(rng).expect("pool is non-empty").clone(), TrainMask::All, 0, Mode::Final)
                })?;
            }
        }
    }
    Ok(params)
}

/// Validation error of each architecture trained on its own with the
/// ground-truth loss. Every architecture starts from the leading slices of
/// the same fresh initialisation and sees the same batch sequence, so scores
/// differ only through the architecture. Trainings run through the device
/// pool's workers; a divergent run yields an `Err` outcome.
pub fn standalone_scores(configs: &[ArchConfig], setup: &ConsistencySetup<'_>, seed: u64, pool: &DevicePool) -> Result<Vec<std::result::Result<f64, String>>> {
    let indexed: Vec<(usize, &ArchConfig)> = configs.iter().enumerate().collect();
    let objective = Objective::Task(GtLoss::Mse);
    let out = run_tasks(
        &indexed,
        &pool.worker_devices(),
        |_| "standalone".to_string(),
        &SchedulerOptions {
            retry: crate::evalengine::RetryPolicy {
                max_retries: 0,
                backoff_ms: 0,
            },
            ..Default::default()
        },
        |_, &(_, cfg)| {
            let mut params = init_maximal(setup.space, setup.dims, &mut stage_seed(seed, 4))?;
            let mut rng = stage_seed(seed, 5);
            train_loop(
                &mut params,
                Stage::Finetune,
                0..setup.standalone_steps,
                &setup.task.train,
                &objective,
                &setup.training,
                &mut rng,
                |_, _| (cfg.clone(), TrainMask::All, 0, Mode::Final),
            )?;
            validation_error(&params, cfg, &setup.task.val)
        },
    )?;
    Ok(out.outcomes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub seed: u64,
    pub strategy: TrainingStrategy,
    pub arch: usize,
    pub config: String,
    pub proxy: f64,
    pub standalone: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub seed: u64,
    pub arch: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: TrainingStrategy,
    /// One coefficient per seed, in seed order.
    pub taus: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub n_arch: usize,
    pub seeds: Vec<u64>,
    pub summaries: Vec<StrategySummary>,
    pub scatter: Vec<ScatterPoint>,
    pub excluded: Vec<Exclusion>,
}

impl ConsistencyReport {
    pub fn summary(&self, strategy: TrainingStrategy) -> Option<&StrategySummary> {
        self.summaries.iter().find(|s| s.strategy == strategy)
    }

    pub fn write_scatter_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "seed,strategy,arch,config,proxy,standalone")?;
        for p in &self.scatter {
            writeln!(out, "{},{},{},{},{},{}", p.seed, p.strategy.name(), p.arch, p.config, p.proxy, p.standalone)?;
        }
        Ok(())
    }
}

/// For each seed: samples `n_arch` architectures, scores them standalone,
/// obtains one supernet per strategy from `supernet_for` and correlates its
/// proxy errors with the standalone errors. Architectures whose standalone
/// training failed are dropped from that seed's pairs.
pub fn consistency_experiment(
    setup: &ConsistencySetup<'_>,
    strategies: &[TrainingStrategy],
    seeds: &[u64],
    pool: &DevicePool,
    mut supernet_for: impl FnMut(TrainingStrategy, u64) -> Result<SupernetParams>,
) -> Result<ConsistencyReport> {
    if seeds.is_empty() || strategies.is_empty() {
        return Err(Error::InvalidInput("consistency needs at least one seed and one strategy".into()));
    }
    let mut taus: Vec<Vec<f64>> = vec![Vec::new(); strategies.len()];
    let mut scatter = Vec::new();
    let mut excluded = Vec::new();
    for &seed in seeds {
        let configs = sample_architectures(setup.space, setup.n_arch, seed)?;
        let standalone = standalone_scores(&configs, setup, seed, pool)?;
        let kept: Vec<usize> = standalone
            .iter()
            .enumerate()
            .filter_map(|(i, r)| match r {
                Ok(_) => Some(i),
                Err(e) => {
                    excluded.push(Exclusion {
                        seed,
                        arch: i,
                        reason: e.clone(),
                    });
                    None
                }
            })
            .collect();
        if kept.len() < 2 {
            return Err(Error::IncompleteEvaluation(format!("seed {seed}: fewer than two standalone trainings succeeded")));
        }
        let truth: Vec<f64> = kept.iter().map(|&i| *standalone[i].as_ref().unwrap()).collect();
        for (k, &strategy) in strategies.iter().enumerate() {
            let params = supernet_for(strategy, seed)?;
            let proxy = kept
                .iter()
                .map(|&i| validation_error(&params, &configs[i], &setup.task.val))
                .collect::<Result<Vec<_>>>()?;
            taus[k].push(kendall_tau(&proxy, &truth)?);
            for ((&i, &p), &t) in kept.iter().zip(&proxy).zip(&truth) {
                scatter.push(ScatterPoint {
                    seed,
                    strategy,
                    arch: i,
                    config: configs[i].label(),
                    proxy: p,
                    standalone: t,
                });
            }
        }
    }
    let summaries = strategies
        .iter()
        .zip(taus)
        .map(|(&strategy, taus)| {
            let (mean, std) = mean_std(&taus);
            StrategySummary { strategy, taus, mean, std }
        })
        .collect();
    Ok(ConsistencyReport {
        n_arch: setup.n_arch,
        seeds: seeds.to_vec(),
        summaries,
        scatter,
        excluded,
    })
}
