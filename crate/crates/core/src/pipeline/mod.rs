//! Two-stage supernet training followed by the evolutionary search loop.

mod checkpoint;
mod search;

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointKind, FORMAT_VERSION};
pub use search::{
    evaluate_population, offspring_generation, search, tournament, EvolutionConfig, GenerationRecord, GenerationTelemetry,
    PopulationEval, SearchState, Searcher,
};

use crate::distill::LossWeights;
use crate::error::Result;
use crate::search_space::ArchConfig;
use crate::supernet::{
    sample_uniform, train_step, GtLoss, Mode, Objective, ProgressiveSchedule, Sample, Sgd, SupernetParams, TrainMask,
};

/// Optimiser and loss settings shared by both stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub lr: f64,
    /// Global gradient-norm bound; `0` disables clipping.
    pub clip_norm: f64,
    pub gt_loss: GtLoss,
    /// Radius of the low-frequency band dropped from the frequency loss;
    /// `0` keeps everything except DC.
    pub high_pass_radius: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            batch_size: 8,
            lr: 0.02,
            clip_norm: 1.0,
            gt_loss: GtLoss::Mse,
            high_pass_radius: 0.0,
        }
    }
}

impl TrainOptions {
    pub fn sgd(&self) -> Sgd {
        Sgd {
            lr: self.lr,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
        }
    }

    pub fn distill_objective(&self, weights: LossWeights) -> Objective {
        Objective::Distill {
            gt: self.gt_loss,
            weights,
            high_pass: (self.high_pass_radius > 0.0).then_some(self.high_pass_radius),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Classification on the sign of the teacher's mean output.
    Pretrain,
    /// Dense regression with the full distillation objective.
    Finetune,
}

impl Stage {
    pub fn objective(self, opts: &TrainOptions, weights: LossWeights) -> Objective {
        match self {
            Stage::Pretrain => Objective::Classify,
            Stage::Finetune => opts.distill_objective(weights),
        }
    }
}

/// One optimisation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub stage: Stage,
    pub iter: usize,
    pub phase: usize,
    pub mode: Mode,
    pub config: String,
    pub loss: f64,
    pub gt: f64,
    pub pseudo: f64,
    pub spat: f64,
    pub freq: f64,
    pub grad_norm: f64,
}

/// Writes logs as CSV with a header.
pub fn write_step_csv<W: Write>(logs: &[StepLog], mut out: W) -> std::io::Result<()> {
    writeln!(out, "stage,iter,phase,mode,config,loss,gt,pseudo,spat,freq,grad_norm")?;
    for l in logs {
        writeln!(
            out,
            "{:?},{},{},{:?},{},{},{},{},{},{},{}",
            l.stage, l.iter, l.phase, l.mode, l.config, l.loss, l.gt, l.pseudo, l.spat, l.freq, l.grad_norm
        )?;
    }
    Ok(())
}

fn sample_batch<'a, R: Rng + ?Sized>(train: &'a [Sample], size: usize, rng: &mut R) -> Vec<&'a Sample> {
    (0..size).map(|_| &train[rng.gen_range(0..train.len())]).collect()
}

/// Generic training loop: `pick(iter, rng)` chooses the subnetwork and the
/// update mask for each step. On divergence the parameters keep their last
/// good values and the error is returned.
pub fn train_loop(
    params: &mut SupernetParams,
    stage: Stage,
    iters: std::ops::Range<usize>,
    train: &[Sample],
    objective: &Objective,
    opts: &TrainOptions,
    rng: &mut ChaCha8Rng,
    mut pick: impl FnMut(usize, &mut ChaCha8Rng) -> (ArchConfig, TrainMask, usize, Mode),
) -> Result<Vec<StepLog>> {
    let sgd = opts.sgd();
    let mut logs = Vec::with_capacity(iters.len());
    for iter in iters {
        let (cfg, mask, phase, mode) = pick(iter, rng);
        let batch = sample_batch(train, opts.batch_size, rng);
        let r = train_step(params, &cfg, &batch, objective, &sgd, &mask)?;
        logs.push(StepLog {
            stage,
            iter,
            phase,
            mode,
            config: cfg.label(),
            loss: r.loss,
            gt: r.components.gt,
            pseudo: r.components.pseudo,
            spat: r.components.spat,
            freq: r.components.freq,
            grad_norm: r.grad_norm,
        });
    }
    Ok(logs)
}

/// Trains along `schedule` from iteration `start` to its end. Each step
/// samples a batch and a subnetwork from the schedule's current sets.
pub fn run_stage(
    stage: Stage,
    params: &mut SupernetParams,
    schedule: &ProgressiveSchedule,
    start: usize,
    train: &[Sample],
    opts: &TrainOptions,
    weights: LossWeights,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<StepLog>> {
    let objective = stage.objective(opts, weights);
    train_loop(params, stage, start..schedule.total_iters(), train, &objective, opts, rng, |iter, rng| {
        let pos = schedule.active_sets(iter);
        (sample_uniform(pos.sampling, rng), pos.mask, pos.phase, pos.mode)
    })
}

/// Resumable state of two-stage supernet training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub params: SupernetParams,
    pub rng: ChaCha8Rng,
    pub stage: Stage,
    /// Next iteration within `stage`.
    pub cursor: usize,
    pub done: bool,
}

impl TrainState {
    pub fn new(params: SupernetParams, rng: ChaCha8Rng) -> Self {
        Self {
            params,
            rng,
            stage: Stage::Pretrain,
            cursor: 0,
            done: false,
        }
    }
}

/// Runs pretraining then fine-tuning from the state's cursor, calling
/// `on_stage` after each completed stage. On divergence the state still
/// holds the parameters of the last good step and the cursor of the stage
/// start.
pub fn train_supernet(
    state: &mut TrainState,
    pretrain: &ProgressiveSchedule,
    finetune: &ProgressiveSchedule,
    train: &[Sample],
    opts: &TrainOptions,
    weights: LossWeights,
    mut on_stage: impl FnMut(&TrainState, &[StepLog]) -> Result<()>,
) -> Result<Vec<StepLog>> {
    let mut all = Vec::new();
    while !state.done {
        let schedule = match state.stage {
            Stage::Pretrain => pretrain,
            Stage::Finetune => finetune,
        };
        let logs = run_stage(state.stage, &mut state.params, schedule, state.cursor, train, opts, weights, &mut state.rng)?;
        match state.stage {
            Stage::Pretrain => state.stage = Stage::Finetune,
            Stage::Finetune => state.done = true,
        }
        state.cursor = 0;
        on_stage(state, &logs)?;
        all.extend(logs);
    }
    Ok(all)
}
