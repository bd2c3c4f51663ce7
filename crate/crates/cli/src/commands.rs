use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hybridnas::analysis::{
    consistency_experiment, default_strategies, throughput_ablation, trajectory_metrics, train_strategy, write_long_csv,
    ConsistencySetup, TrainingStrategy, Workload,
};
use hybridnas::config::RunConfig;
use hybridnas::evalengine::{write_jsonl, write_throughput_csv};
use hybridnas::moea::ObjectiveVector;
use hybridnas::pipeline::{
    load_checkpoint, save_checkpoint, train_supernet, write_step_csv, CheckpointKind, SearchState, Searcher, TrainState,
};
use hybridnas::search_space::{decode, ArchConfig, Genotype};
use hybridnas::supernet::{init_maximal, MicroTask, SupernetParams};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ConfigArgs;

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    Ok(out.flush()?)
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_sha256: String,
    seed: u64,
    task_seed: u64,
    evolution_seed: u64,
    config: &'a RunConfig,
}

fn prepare(args: &ConfigArgs, command: &str) -> Result<RunConfig> {
    let cfg = args.load()?;
    fs::create_dir_all(&cfg.output.dir).with_context(|| format!("cannot create {}", cfg.output.dir.display()))?;
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: cfg.digest(),
        seed: cfg.seed,
        task_seed: cfg.task.seed,
        evolution_seed: cfg.evolution.seed,
        config: &cfg,
    };
    write_json(&cfg.output.dir.join(format!("{command}.manifest.json")), &manifest)?;
    Ok(cfg)
}

fn load_supernet(path: &Path, cfg: &RunConfig) -> Result<SupernetParams> {
    let state: TrainState =
        load_checkpoint(path, CheckpointKind::Supernet).with_context(|| format!("cannot load supernet checkpoint {}", path.display()))?;
    if !state.done {
        bail!("{} holds an unfinished training run", path.display());
    }
    if state.params.space != cfg.space || state.params.dims != cfg.dims() {
        return Err(hybridnas::Error::InvalidConfig(format!("{} was trained with a different space or model", path.display())).into());
    }
    Ok(state.params)
}

pub fn train(args: &ConfigArgs) -> Result<()> {
    let cfg = prepare(args, "train")?;
    let task = MicroTask::generate(&cfg.task)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = init_maximal(&cfg.space, &cfg.dims(), &mut rng)?;
    let mut state = TrainState::new(params, rng);
    let ckpt = cfg.output.dir.join("supernet.ckpt");
    let (pre, fin) = (cfg.pretrain_schedule(), cfg.finetune_schedule());
    info!("training for {} + {} iterations", pre.total_iters(), fin.total_iters());
    let logs = train_supernet(&mut state, &pre, &fin, &task.train, &cfg.training, cfg.loss_weights, |s, logs| {
        info!("stage {:?} finished after {} steps", logs.first().map(|l| l.stage), logs.len());
        save_checkpoint(&ckpt, CheckpointKind::Supernet, s)
    })
    .with_context(|| format!("training aborted; last good checkpoint is {}", ckpt.display()))?;
    write_step_csv(&logs, create(&cfg.output.dir.join("loss_log.csv"))?)?;
    println!("{} steps, checkpoint {}", logs.len(), ckpt.display());
    Ok(())
}

#[derive(Serialize)]
struct ArchiveRow {
    genotype: Genotype,
    label: String,
    config: ArchConfig,
    objectives: ObjectiveVector,
}

fn write_search_outputs(dir: &Path, state: &SearchState) -> Result<()> {
    let rows = state
        .archive
        .entries()
        .iter()
        .map(|e| {
            let config = decode(&e.genotype, &state.space)?;
            Ok(ArchiveRow {
                genotype: e.genotype.clone(),
                label: config.label(),
                config,
                objectives: e.objectives,
            })
        })
        .collect::<hybridnas::Result<Vec<_>>>()?;
    write_json(&dir.join("archive.json"), &rows)?;
    let mut traj = create(&dir.join("trajectory.jsonl"))?;
    for r in &state.trajectory {
        serde_json::to_writer(&mut traj, r)?;
        traj.write_all(b"\n")?;
    }
    traj.flush()?;
    let fitness_dir = dir.join("fitness");
    fs::create_dir_all(&fitness_dir)?;
    for r in &state.trajectory {
        r.fitness.write_csv(create(&fitness_dir.join(format!("gen_{:03}.csv", r.generation)))?)?;
    }
    Ok(())
}

pub fn search(args: &ConfigArgs, checkpoint: Option<PathBuf>, resume: bool, until: Option<usize>) -> Result<()> {
    let cfg = prepare(args, "search")?;
    let dir = &cfg.output.dir;
    let snapshot = load_supernet(&checkpoint.unwrap_or_else(|| dir.join("supernet.ckpt")), &cfg)?;
    let task = MicroTask::generate(&cfg.task)?;
    let pool = cfg.device_pool()?;
    let engine = cfg.engine_options();
    let searcher = Searcher {
        space: &cfg.space,
        snapshot: &snapshot,
        val: &task.val,
        pool: &pool,
        engine: &engine,
        evolution: cfg.evolution,
    };
    let state_path = dir.join("search.ckpt");
    let telemetry_path = dir.join("telemetry.jsonl");
    let mut state = if resume && state_path.exists() {
        let s: SearchState = load_checkpoint(&state_path, CheckpointKind::Search)?;
        if s.space != cfg.space || s.evolution != cfg.evolution {
            return Err(hybridnas::Error::InvalidConfig("search checkpoint was made with different space or evolution settings".into()).into());
        }
        info!("resuming after generation {}", s.generation);
        s
    } else {
        let (s, t) = searcher.init()?;
        write_jsonl(&t.records, create(&telemetry_path)?)?;
        save_checkpoint(&state_path, CheckpointKind::Search, &s)?;
        s
    };
    let mut telemetry = fs::OpenOptions::new().create(true).append(true).open(&telemetry_path)?;
    searcher.run(&mut state, until.unwrap_or(usize::MAX), |s, t| {
        let last = s.trajectory.last().expect("a generation completed");
        info!(
            "generation {}: archive {} hv {:.4} dispatched {} wall {:.2}s",
            t.generation, last.archive_size, last.archive_hv, last.dispatched, t.wall_s
        );
        write_jsonl(&t.records, &mut telemetry).map_err(|e| hybridnas::Error::Serialization(e.to_string()))?;
        save_checkpoint(&state_path, CheckpointKind::Search, s)
    })?;
    write_search_outputs(dir, &state)?;
    println!(
        "generation {}/{}: archive {} entries, hypervolume {:.4}",
        state.generation,
        state.evolution.generations,
        state.archive.len(),
        state.hv_sequence().last().copied().unwrap_or(0.0)
    );
    Ok(())
}

pub fn bench(args: &ConfigArgs) -> Result<()> {
    let cfg = prepare(args, "bench")?;
    let b = &cfg.bench;
    let workload = Workload {
        n_tasks: b.n_tasks,
        task_cost_s: b.task_cost_s,
        cost_spread: b.cost_spread,
        seed: cfg.seed,
    };
    let rows = throughput_ablation(&workload, b.devices, &default_strategies(), &b.sim)?;
    write_throughput_csv(&rows, create(&cfg.output.dir.join("throughput.csv"))?)?;
    write_throughput_csv(&rows, std::io::stdout().lock())?;
    Ok(())
}

pub fn consistency(args: &ConfigArgs, checkpoints: &[(TrainingStrategy, PathBuf)], strategies: &[TrainingStrategy]) -> Result<()> {
    let cfg = prepare(args, "consistency")?;
    let task = MicroTask::generate(&cfg.task)?;
    let dims = cfg.dims();
    let (pre, fin) = (cfg.pretrain_schedule(), cfg.finetune_schedule());
    let c = &cfg.consistency;
    let setup = ConsistencySetup {
        space: &cfg.space,
        dims: &dims,
        task: &task,
        pretrain: &pre,
        finetune: &fin,
        training: cfg.training,
        weights: cfg.loss_weights,
        n_arch: c.n_arch,
        standalone_steps: c.standalone_steps,
        pool_size: c.pool_size,
    };
    let mut strategies = if strategies.is_empty() { TrainingStrategy::ALL.to_vec() } else { strategies.to_vec() };
    strategies.dedup();
    let loaded = checkpoints
        .iter()
        .map(|(s, p)| Ok((*s, load_supernet(p, &cfg)?)))
        .collect::<Result<Vec<_>>>()?;
    let seeds: Vec<u64> = (0..c.seeds as u64).map(|i| cfg.seed + i).collect();
    let pool = cfg.device_pool()?;
    let report = consistency_experiment(&setup, &strategies, &seeds, &pool, |strategy, seed| {
        match loaded.iter().find(|(s, _)| *s == strategy) {
            Some((_, p)) => Ok(p.clone()),
            None => {
                info!("training {} supernet for seed {seed}", strategy.name());
                train_strategy(strategy, &setup, seed)
            }
        }
    })?;
    write_json(&cfg.output.dir.join("consistency.json"), &report)?;
    report.write_scatter_csv(create(&cfg.output.dir.join("consistency_scatter.csv"))?)?;
    println!("strategy,seeds,n_arch,tau_mean,tau_std");
    for s in &report.summaries {
        println!("{},{},{},{:.4},{:.4}", s.strategy.name(), s.taus.len(), report.n_arch, s.mean, s.std);
    }
    if !report.excluded.is_empty() {
        eprintln!("{} standalone trainings excluded", report.excluded.len());
    }
    Ok(())
}

pub fn report(args: &ConfigArgs, state: Option<PathBuf>) -> Result<()> {
    let cfg = args.load()?;
    let path = state.unwrap_or_else(|| cfg.output.dir.join("search.ckpt"));
    let s: SearchState = load_checkpoint(&path, CheckpointKind::Search).with_context(|| format!("cannot load {}", path.display()))?;
    let rows = trajectory_metrics(&s);
    let out = cfg.output.dir.join("report.csv");
    fs::create_dir_all(&cfg.output.dir)?;
    write_long_csv(&rows, create(&out)?)?;
    println!("{} rows written to {}", rows.len(), out.display());
    Ok(())
}
