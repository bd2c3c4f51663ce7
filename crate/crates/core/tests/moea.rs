use hybridnas::moea::{
    dominates, fast_nondominated_sort, hypervolume, pareto_front, survival_indices, FitnessMatrix, ObjectiveVector,
    ParetoArchive, Population,
};
use hybridnas::search_space::{random_genotype, SearchSpace};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn points(max: usize) -> impl Strategy<Value = Vec<ObjectiveVector>> {
    prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 1..max)
        .prop_map(|v| v.into_iter().map(|(a, b, c)| ObjectiveVector::new(a, b, c)).collect())
}

fn reference() -> ObjectiveVector {
    ObjectiveVector::new(1.5, 1.5, 1.5)
}

proptest! {
    #[test]
    fn hypervolume_grows_with_points(pts in points(20), extra in (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0)) {
        let base = hypervolume(&pts, &reference()).value;
        let mut more = pts.clone();
        more.push(ObjectiveVector::new(extra.0, extra.1, extra.2));
        prop_assert!(hypervolume(&more, &reference()).value >= base - 1e-12);
        prop_assert!(base <= 1.5f64.powi(3));
    }

    #[test]
    fn dominated_points_add_nothing(pts in points(20)) {
        let base = hypervolume(&pts, &reference()).value;
        let mut more = pts.clone();
        more.extend(pts.iter().map(|p| ObjectiveVector::new(p.err + 0.1, p.latency_ms, p.macs + 0.05)));
        prop_assert!((hypervolume(&more, &reference()).value - base).abs() < 1e-12);
    }

    #[test]
    fn hypervolume_ignores_order(pts in points(16)) {
        let mut rev = pts.clone();
        rev.reverse();
        prop_assert!((hypervolume(&pts, &reference()).value - hypervolume(&rev, &reference()).value).abs() < 1e-12);
    }

    #[test]
    fn fronts_partition_and_respect_dominance(pts in points(40)) {
        let f = FitnessMatrix::new(pts.clone()).unwrap();
        let fronts = fast_nondominated_sort(&f);
        let mut seen: Vec<usize> = fronts.concat();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..pts.len()).collect::<Vec<_>>());
        let mut rank = vec![0; pts.len()];
        for (r, front) in fronts.iter().enumerate() {
            for &i in front {
                rank[i] = r;
            }
        }
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                if dominates(&pts[i], &pts[j]).unwrap() {
                    prop_assert!(rank[i] < rank[j]);
                }
            }
        }
    }

    #[test]
    fn survival_keeps_whole_better_fronts(pts in points(40), frac in 0.0f64..1.0) {
        let f = FitnessMatrix::new(pts.clone()).unwrap();
        let keep = (frac * pts.len() as f64) as usize;
        let chosen = survival_indices(&f, keep).unwrap();
        prop_assert_eq!(chosen.len(), keep);
        let mut rank = vec![0; pts.len()];
        for (r, front) in fast_nondominated_sort(&f).iter().enumerate() {
            for &i in front {
                rank[i] = r;
            }
        }
        let worst_kept = chosen.iter().map(|&i| rank[i]).max();
        if let Some(w) = worst_kept {
            for i in 0..pts.len() {
                if rank[i] < w {
                    prop_assert!(chosen.contains(&i));
                }
            }
        }
    }

    #[test]
    fn archive_matches_population_front(pts in points(30), seed in any::<u64>()) {
        let space = SearchSpace::desk_scale();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let members: Vec<_> = pts.iter().map(|_| random_genotype(&space, &mut rng)).collect();
        let pop = Population::with_fitness(members.clone(), FitnessMatrix::new(pts.clone()).unwrap()).unwrap();
        let front = pareto_front(&pop).unwrap();
        let mut incremental = ParetoArchive::default();
        for (g, p) in members.iter().zip(&pts) {
            incremental.insert(g.clone(), *p);
        }
        let key = |a: &ParetoArchive| {
            let mut v: Vec<String> = a.entries().iter().map(|e| format!("{:?}{:?}", e.genotype, e.objectives)).collect();
            v.sort();
            v
        };
        prop_assert_eq!(key(&front), key(&incremental));
        let objs = front.objectives();
        for a in &objs {
            prop_assert!(objs.iter().all(|b| !dominates(b, a).unwrap()));
        }
    }
}

#[test]
fn empty_and_outside_sets() {
    assert_eq!(hypervolume(&[], &reference()).value, 0.0);
    let hv = hypervolume(&[ObjectiveVector::new(2.0, 0.0, 0.0)], &reference());
    assert_eq!((hv.value, hv.skipped), (0.0, 1));
}
