use std::collections::HashSet;

use hybridnas::distill::LossWeights;
use hybridnas::evalengine::{CostModel, DevicePool, EngineOptions, LatencyProtocol, SimulatedDevice};
use hybridnas::moea::{dominates, rank_and_crowd, FitnessMatrix, ObjectiveVector, Population};
use hybridnas::pipeline::{
    evaluate_population, load_checkpoint, offspring_generation, run_stage, save_checkpoint, tournament, CheckpointKind,
    EvolutionConfig, SearchState, Searcher, Stage, TrainOptions,
};
use hybridnas::search_space::{random_genotype, validate, Genotype, SearchSpace};
use hybridnas::supernet::{init_maximal, MicroTask, ProgressiveSchedule, SupernetDims, SupernetParams, TaskSpec};
use hybridnas::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn micro_space() -> SearchSpace {
    SearchSpace {
        d_state: vec![2, 4],
        ssd_expand: vec![1.0, 2.0],
        mlp_ratio: vec![1.0, 2.0],
        max_depth_per_stage: vec![2, 2],
    }
}

fn spec() -> TaskSpec {
    TaskSpec {
        image: (8, 8),
        patch: 2,
        teacher_patch: 2,
        teacher_width: 8,
        n_train: 16,
        n_val: 6,
        label_noise: 0.1,
        seed: 3,
    }
}

fn dims() -> SupernetDims {
    SupernetDims {
        image: (8, 8),
        patch: 2,
        d_model: vec![8, 8],
        teacher_grid: (4, 4),
        teacher_dim: 8,
        proj_key_dim: 8,
        proj_heads: 1,
    }
}

fn supernet(space: &SearchSpace, seed: u64) -> SupernetParams {
    init_maximal(space, &dims(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn pool() -> DevicePool {
    DevicePool::simulated(
        2,
        2,
        3,
        SimulatedDevice {
            cost: CostModel::default(),
            jitter: 0.1,
            interference_ms: 0.2,
            seed: 5,
        },
    )
    .unwrap()
}

fn engine() -> EngineOptions {
    EngineOptions {
        protocol: LatencyProtocol {
            warmup_runs: 1,
            timed_runs: 5,
        },
        ..Default::default()
    }
}

fn evolution(pop_size: usize, generations: usize) -> EvolutionConfig {
    EvolutionConfig {
        pop_size,
        generations,
        seed: 11,
        ..Default::default()
    }
}

#[test]
fn empty_schedule_leaves_parameters() {
    let space = micro_space();
    let task = MicroTask::generate(&spec()).unwrap();
    let mut p = supernet(&space, 1);
    let before = p.clone();
    let schedule = ProgressiveSchedule::standard(&space, 0, 0, 0);
    let logs = run_stage(
        Stage::Finetune,
        &mut p,
        &schedule,
        0,
        &task.train,
        &TrainOptions::default(),
        LossWeights::default(),
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    assert!(logs.is_empty());
    assert_eq!(p, before);
}

fn finetune(seed: u64, iters: usize) -> (SupernetParams, Vec<f64>) {
    let space = micro_space();
    let task = MicroTask::generate(&spec()).unwrap();
    let mut p = supernet(&space, seed);
    let schedule = ProgressiveSchedule::standard(&space, 0, 0, iters);
    let logs = run_stage(
        Stage::Finetune,
        &mut p,
        &schedule,
        0,
        &task.train,
        &TrainOptions::default(),
        LossWeights::default(),
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
    .unwrap();
    (p, logs.iter().map(|l| l.loss).collect())
}

#[test]
fn finetune_reduces_loss() {
    let (_, losses) = finetune(4, 500);
    assert_eq!(losses.len(), 500);
    let means: Vec<f64> = losses.chunks(100).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    assert!(means[4] < means[0], "window means {means:?}");
}

#[test]
fn training_is_bitwise_deterministic() {
    let (a, la) = finetune(9, 60);
    let (b, lb) = finetune(9, 60);
    assert_eq!(a, b);
    assert_eq!(la.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), lb.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
}

fn evaluated_parents(space: &SearchSpace, n: usize, seed: u64) -> Population {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let members: Vec<Genotype> = (0..n).map(|_| random_genotype(space, &mut rng)).collect();
    let rows = (0..n).map(|i| ObjectiveVector::new(i as f64, (n - i) as f64, (i * 7 % 5) as f64)).collect();
    Population::with_fitness(members, FitnessMatrix::new(rows).unwrap()).unwrap()
}

#[test]
fn no_variation_copies_parents() {
    let space = SearchSpace::desk_scale();
    let parents = evaluated_parents(&space, 12, 1);
    let evo = EvolutionConfig {
        p_c: 0.0,
        p_m: 0.0,
        ..Default::default()
    };
    let q = offspring_generation(&parents, &space, &evo, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(q.len(), parents.len());
    assert!(q.members.iter().all(|c| parents.members.contains(c)));
    assert!(q.fitness.is_none());
}

#[test]
fn offspring_needs_fitness() {
    let space = SearchSpace::desk_scale();
    let parents = Population::new(vec![random_genotype(&space, &mut ChaCha8Rng::seed_from_u64(0)); 4]);
    let r = offspring_generation(&parents, &space, &EvolutionConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
    assert!(matches!(r, Err(Error::InvalidInput(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn offspring_are_valid(seed in any::<u64>(), half in 1usize..12) {
        let space = SearchSpace::desk_scale();
        let parents = evaluated_parents(&space, 2 * half, seed);
        let q = offspring_generation(&parents, &space, &EvolutionConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed ^ 1)).unwrap();
        prop_assert_eq!(q.len(), parents.len());
        for c in &q.members {
            prop_assert!(validate(c, &space));
        }
    }
}

#[test]
fn dominating_parent_wins_tournament() {
    let f = FitnessMatrix::new(vec![ObjectiveVector::new(1.0, 1.0, 1.0), ObjectiveVector::new(2.0, 2.0, 2.0)]).unwrap();
    let ranked = rank_and_crowd(&f);
    // Replaying the two draws: whenever they differ, the dominating index wins.
    let mut a = ChaCha8Rng::seed_from_u64(7);
    let mut b = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let (x, y) = (b.gen_range(0..2usize), b.gen_range(0..2usize));
        let w = tournament(&ranked, &mut a);
        if x != y {
            assert_eq!(w, 0);
        } else {
            assert_eq!(w, x);
        }
    }
}

fn brute_force_front(points: &[ObjectiveVector]) -> Vec<ObjectiveVector> {
    let mut out: Vec<ObjectiveVector> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let dominated = points.iter().any(|q| dominates(q, p).unwrap());
        let repeated = points[..i].iter().any(|q| q == p);
        if !dominated && !repeated {
            out.push(*p);
        }
    }
    out
}

fn sorted_bits(v: &[ObjectiveVector]) -> Vec<[u64; 3]> {
    let mut b: Vec<[u64; 3]> = v.iter().map(|o| o.to_array().map(f64::to_bits)).collect();
    b.sort_unstable();
    b
}

#[test]
fn single_generation_archive_matches_brute_force() {
    let space = micro_space();
    let task = MicroTask::generate(&spec()).unwrap();
    let p = supernet(&space, 2);
    let (pool, engine) = (pool(), engine());
    let searcher = Searcher {
        space: &space,
        snapshot: &p,
        val: &task.val,
        pool: &pool,
        engine: &engine,
        evolution: evolution(8, 1),
    };
    let (mut state, _) = searcher.init().unwrap();
    let init = state.population.clone();
    let offspring = offspring_generation(&init, &space, &state.evolution, &mut state.rng.clone()).unwrap();
    searcher.run(&mut state, 1, |_, _| Ok(())).unwrap();

    let q = evaluate_population(&offspring.members, &space, &p, &task.val, &pool, &engine).unwrap();
    let mut all = init.fitness.unwrap().rows;
    all.extend(q.fitness.rows);
    assert_eq!(all.len(), 16);
    assert_eq!(sorted_bits(&state.archive.objectives()), sorted_bits(&brute_force_front(&all)));
}

fn run_search(gens: usize, split: Option<usize>, dir: &std::path::Path) -> SearchState {
    let space = micro_space();
    let task = MicroTask::generate(&spec()).unwrap();
    let p = supernet(&space, 2);
    let (pool, engine) = (pool(), engine());
    let searcher = Searcher {
        space: &space,
        snapshot: &p,
        val: &task.val,
        pool: &pool,
        engine: &engine,
        evolution: evolution(8, gens),
    };
    let (mut state, _) = searcher.init().unwrap();
    if let Some(at) = split {
        searcher.run(&mut state, at, |_, _| Ok(())).unwrap();
        let path = dir.join("search.ckpt");
        save_checkpoint(&path, CheckpointKind::Search, &state).unwrap();
        drop(state);
        state = load_checkpoint(&path, CheckpointKind::Search).unwrap();
    }
    searcher.run(&mut state, usize::MAX, |_, _| Ok(())).unwrap();
    state
}

#[test]
fn search_invariants_hold() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_search(6, None, dir.path());
    assert_eq!(s.generation, 6);
    assert_eq!(s.trajectory.len(), 6);
    assert_eq!(s.evaluations, 8 * 7);
    assert!(s.trajectory.iter().all(|r| r.members.len() == 8));
    let hv = s.hv_sequence();
    assert!(hv.windows(2).all(|w| w[1] >= w[0]), "{hv:?}");
    let archived: HashSet<&Genotype> = s.archive.entries().iter().map(|e| &e.genotype).collect();
    assert_eq!(archived.len(), s.archive.len());
    let objs = s.archive.objectives();
    assert!(objs.iter().all(|a| objs.iter().all(|b| !dominates(b, a).unwrap())));
}

#[test]
fn resumed_search_equals_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    let full = run_search(10, None, dir.path());
    let resumed = run_search(10, Some(5), dir.path());
    assert_eq!(full, resumed);
}

#[test]
fn search_checkpoint_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_search(2, None, dir.path());
    let path = dir.path().join("s.ckpt");
    save_checkpoint(&path, CheckpointKind::Search, &s).unwrap();
    let back: SearchState = load_checkpoint(&path, CheckpointKind::Search).unwrap();
    assert_eq!(back, s);
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(load_checkpoint::<SearchState>(&path, CheckpointKind::Search), Err(Error::Checksum(_))));
}
