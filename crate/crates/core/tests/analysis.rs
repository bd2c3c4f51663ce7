use hybridnas::analysis::{
    consistency_experiment, kendall_tau, nid, sample_architectures, throughput_ablation, train_strategy, ConsistencySetup,
    TrainingStrategy, Workload,
};
use hybridnas::evalengine::{CostModel, DevicePool, SimCost, SimulatedDevice, Strategy as Layout};
use hybridnas::pipeline::TrainOptions;
use hybridnas::search_space::SearchSpace;
use hybridnas::supernet::{MicroTask, ProgressiveSchedule, SupernetDims, TaskSpec};
use hybridnas::Error;
use proptest::prelude::*;

/// Tau-b from tie-group sizes: (nc - nd) / sqrt((n0 - n1)(n0 - n2)).
fn tau_b_oracle(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let pairs = |v: &[f64]| -> f64 {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s.chunk_by(|x, y| x == y).map(|g| (g.len() * (g.len() - 1) / 2) as f64).sum()
    };
    let (mut nc, mut nd) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..i {
            let s = (a[i] - a[j]).signum() * (b[i] - b[j]).signum();
            if a[i] != a[j] && b[i] != b[j] {
                if s > 0.0 {
                    nc += 1.0
                } else {
                    nd += 1.0
                }
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as f64;
    (nc - nd) / ((n0 - pairs(a)) * (n0 - pairs(b))).sqrt()
}

#[test]
fn kendall_examples() {
    let a = [1.0, 2.0, 3.0, 4.0];
    assert_eq!(kendall_tau(&a, &a).unwrap(), 1.0);
    assert_eq!(kendall_tau(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
    let t = kendall_tau(&a, &[1.0, 3.0, 2.0, 4.0]).unwrap();
    assert!((t - (5.0 - 1.0) / 6.0).abs() < 1e-15);
    assert!(matches!(kendall_tau(&a, &a[..3]), Err(Error::Shape(_))));
    assert!(kendall_tau(&[1.0], &[1.0]).is_err());
    assert!(kendall_tau(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
}

fn tied_values() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..24).prop_flat_map(|n| (prop::collection::vec(0u8..6, n), prop::collection::vec(0u8..6, n)))
        .prop_map(|(a, b)| (a.into_iter().map(f64::from).collect(), b.into_iter().map(f64::from).collect()))
}

proptest! {
    #[test]
    fn kendall_matches_tie_group_oracle((a, b) in tied_values()) {
        let t = kendall_tau(&a, &b).unwrap();
        let o = tau_b_oracle(&a, &b);
        if o.is_finite() {
            prop_assert!((t - o).abs() < 1e-12, "{} vs {}", t, o);
        } else {
            prop_assert_eq!(t, 0.0);
        }
        prop_assert!((-1.0..=1.0).contains(&t));
    }

    #[test]
    fn kendall_symmetry_and_monotone_invariance(a in prop::collection::vec(-5.0f64..5.0, 2..20), seed in any::<u64>()) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| (x * 3.1 + (seed.wrapping_add(i as u64) % 7) as f64).sin()).collect();
        let t = kendall_tau(&a, &b).unwrap();
        prop_assert_eq!(t, kendall_tau(&b, &a).unwrap());
        let fa: Vec<f64> = a.iter().map(|x| x.exp() * 2.0 + 1.0).collect();
        prop_assert_eq!(t, kendall_tau(&fa, &b).unwrap());
    }

    #[test]
    fn nid_is_homogeneous(perf in 0.0f64..100.0, params in 0.1f64..100.0) {
        let base = nid(perf, params).unwrap();
        prop_assert!((nid(perf, 2.0 * params).unwrap() - base / 2.0).abs() <= 1e-12 * base.abs().max(1.0));
        prop_assert!((nid(2.0 * perf, params).unwrap() - 2.0 * base).abs() <= 1e-12 * base.abs().max(1.0));
    }
}

#[test]
fn nid_examples() {
    assert!((nid(44.1, 22.8).unwrap() - 1.934).abs() < 1e-3);
    assert_eq!(nid(0.0, 5.0).unwrap(), 0.0);
    assert!(matches!(nid(1.0, 0.0), Err(Error::InvalidInput(_))));
    assert!(matches!(nid(1.0, -2.0), Err(Error::InvalidInput(_))));
}

fn homogeneous() -> Workload {
    Workload {
        n_tasks: 96,
        task_cost_s: 4.0,
        cost_spread: 0.0,
        seed: 0,
    }
}

#[test]
fn ablation_speedup_and_layout_ordering() {
    let grid = [
        Layout::Sequential,
        Layout::DataParallel,
        Layout::PersistentWorkers,
        Layout::Dmmpe { n_procs: 4, b_m: 3 },
        Layout::Dmmpe { n_procs: 3, b_m: 4 },
    ];
    let rows = throughput_ablation(&homogeneous(), 8, &grid, &SimCost::default()).unwrap();
    assert_eq!(rows.len(), grid.len());
    assert!(rows.windows(2).all(|w| w[0].time_per_gen <= w[1].time_per_gen));
    let find = |name: &str, np: usize, bm: usize| rows.iter().find(|r| r.strategy == name && r.n_procs == np && r.b_m == bm).unwrap();
    let seq = find("sequential", 1, 1);
    assert_eq!(seq.speedup, 1.0);
    let best = find("dmmpe", 4, 3);
    assert!(best.speedup > 3.0, "{}", best.speedup);
    assert!(best.time_per_gen < find("dmmpe", 3, 4).time_per_gen);
    for r in &rows {
        assert!((r.speedup - seq.time_per_gen / r.time_per_gen).abs() < 1e-12);
    }
    assert_eq!(rows, throughput_ablation(&homogeneous(), 8, &grid, &SimCost::default()).unwrap());
}

#[test]
fn ablation_always_includes_sequential() {
    let rows = throughput_ablation(&homogeneous(), 1, &[Layout::Dmmpe { n_procs: 1, b_m: 1 }], &SimCost::default()).unwrap();
    assert_eq!(rows.len(), 2);
    let (a, b) = (rows[0].time_per_gen, rows[1].time_per_gen);
    assert!((a - b).abs() < 1e-9, "{a} vs {b}");
}

#[test]
fn workload_costs_are_seeded() {
    let w = Workload {
        cost_spread: 0.3,
        ..homogeneous()
    };
    let c = w.costs();
    assert_eq!(c, w.costs());
    assert!(c.iter().all(|x| (2.8..=5.2).contains(x)));
    assert_ne!(c, Workload { seed: 1, ..w }.costs());
}

fn tiny() -> (SearchSpace, SupernetDims, MicroTask) {
    let space = SearchSpace {
        d_state: vec![2, 4],
        ssd_expand: vec![1.0, 2.0],
        mlp_ratio: vec![1.0, 2.0],
        max_depth_per_stage: vec![2, 2],
    };
    let dims = SupernetDims {
        image: (8, 8),
        patch: 2,
        d_model: vec![8, 8],
        teacher_grid: (4, 4),
        teacher_dim: 8,
        proj_key_dim: 8,
        proj_heads: 1,
    };
    let task = MicroTask::generate(&TaskSpec {
        image: (8, 8),
        patch: 2,
        teacher_patch: 2,
        teacher_width: 8,
        n_train: 16,
        n_val: 8,
        label_noise: 0.05,
        seed: 1,
    })
    .unwrap();
    (space, dims, task)
}

fn pool() -> DevicePool {
    DevicePool::simulated(
        2,
        1,
        1,
        SimulatedDevice {
            cost: CostModel::default(),
            jitter: 0.0,
            interference_ms: 0.0,
            seed: 0,
        },
    )
    .unwrap()
}

#[test]
fn architecture_samples_are_distinct() {
    let (space, ..) = tiny();
    let a = sample_architectures(&space, 40, 3).unwrap();
    let labels: std::collections::BTreeSet<String> = a.iter().map(|c| c.label()).collect();
    assert_eq!(labels.len(), 40);
    assert_eq!(a, sample_architectures(&space, 40, 3).unwrap());
    assert!(sample_architectures(&space, 257, 3).is_err());
}

#[test]
fn consistency_experiment_is_deterministic() {
    let (space, dims, task) = tiny();
    let pre = ProgressiveSchedule::standard(&space, 1, 2, 2);
    let fin = ProgressiveSchedule::standard(&space, 1, 2, 3);
    let setup = ConsistencySetup {
        space: &space,
        dims: &dims,
        task: &task,
        pretrain: &pre,
        finetune: &fin,
        training: TrainOptions::default(),
        weights: Default::default(),
        n_arch: 5,
        standalone_steps: 4,
        pool_size: 3,
    };
    let run = || consistency_experiment(&setup, &TrainingStrategy::ALL, &[1, 2], &pool(), |s, seed| train_strategy(s, &setup, seed)).unwrap();
    let r = run();
    assert_eq!(r.summaries.len(), 3);
    assert!(r.summaries.iter().all(|s| s.taus.len() == 2 && s.taus.iter().all(|t| (-1.0..=1.0).contains(t))));
    assert_eq!(r.scatter.len(), 2 * 3 * 5);
    assert!(r.excluded.is_empty());
    assert_eq!(r, run());

    // Scoring the standalone numbers against themselves is perfectly consistent.
    for seed in [1u64, 2] {
        let pts: Vec<f64> = r.scatter.iter().filter(|p| p.seed == seed && p.strategy == TrainingStrategy::Progressive).map(|p| p.standalone).collect();
        assert_eq!(kendall_tau(&pts, &pts).unwrap(), 1.0);
    }

    let failing = consistency_experiment(&setup, &[TrainingStrategy::Progressive], &[1], &pool(), |_, _| {
        Err(Error::InvalidInput("no supernet".into()))
    });
    assert!(failing.is_err());
}

#[test]
fn strategy_names_round_trip() {
    for s in TrainingStrategy::ALL {
        assert_eq!(s.name().parse::<TrainingStrategy>().unwrap(), s);
    }
    assert!("nope".parse::<TrainingStrategy>().is_err());
}
