use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalengine::{evaluate, DevicePool, EngineOptions, TaskRecord};
use crate::moea::{
    fast_nondominated_sort, rank_and_crowd, survival, FitnessMatrix, HypervolumeReference, ParetoArchive, Population, RankedFitness,
};
use crate::search_space::{
    bitflip_mutation_depth, decode, polynomial_mutation_int, random_genotype, two_point_crossover_int, uniform_crossover_depth,
    Genotype, SearchSpace,
};
use crate::supernet::{Sample, SupernetParams};

/// Evolution settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    pub pop_size: usize,
    pub generations: usize,
    pub p_c: f64,
    pub p_m: f64,
    /// Distribution index of the polynomial mutation.
    pub eta_m: f64,
    pub seed: u64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            pop_size: 96,
            generations: 30,
            p_c: 0.95,
            p_m: 0.1,
            eta_m: 20.0,
            seed: 0,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pop_size < 2 || self.pop_size % 2 != 0 {
            return Err(Error::InvalidConfig(format!("evolution.pop_size = {} must be even and >= 2", self.pop_size)));
        }
        if self.generations == 0 {
            return Err(Error::InvalidConfig("evolution.generations must be >= 1".into()));
        }
        for (name, p) in [("p_c", self.p_c), ("p_m", self.p_m)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("evolution.{name} = {p} outside [0, 1]")));
            }
        }
        if !(self.eta_m >= 0.0 && self.eta_m.is_finite()) {
            return Err(Error::InvalidConfig(format!("evolution.eta_m = {} must be finite and >= 0", self.eta_m)));
        }
        Ok(())
    }
}

/// Summary of one completed generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub members: Vec<Genotype>,
    pub fitness: FitnessMatrix,
    pub front0: Vec<usize>,
    pub archive_size: usize,
    /// Archive hypervolume normalised by the generation-0 reference box.
    pub archive_hv: f64,
    /// Fitness rows assigned so far, duplicates included.
    pub evaluations: usize,
    /// Distinct genotypes actually dispatched in this generation.
    pub dispatched: usize,
    pub failed: Vec<usize>,
}

/// Complete resumable search state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub space: SearchSpace,
    pub evolution: EvolutionConfig,
    /// Last completed generation (0 after initialisation).
    pub generation: usize,
    pub population: Population,
    pub archive: ParetoArchive,
    pub reference: HypervolumeReference,
    pub initial_hv: f64,
    pub trajectory: Vec<GenerationRecord>,
    pub evaluations: usize,
    pub rng: ChaCha8Rng,
}

impl SearchState {
    pub fn is_done(&self) -> bool {
        self.generation >= self.evolution.generations
    }

    /// Archive hypervolume after initialisation and after each generation.
    pub fn hv_sequence(&self) -> Vec<f64> {
        std::iter::once(self.initial_hv).chain(self.trajectory.iter().map(|r| r.archive_hv)).collect()
    }
}

/// Wall-clock data of one generation, kept out of the deterministic state.
#[derive(Debug, Clone)]
pub struct GenerationTelemetry {
    pub generation: usize,
    pub wall_s: f64,
    pub retries: usize,
    pub records: Vec<TaskRecord>,
}

/// Binary tournament on (rank, crowding): lower rank wins, then larger
/// crowding distance, then the first draw.
pub fn tournament<R: Rng + ?Sized>(ranked: &RankedFitness, rng: &mut R) -> usize {
    let n = ranked.rank.len();
    let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
    let better = |x: usize, y: usize| ranked.rank[x] < ranked.rank[y] || (ranked.rank[x] == ranked.rank[y] && ranked.crowding[x] > ranked.crowding[y]);
    if better(b, a) {
        b
    } else {
        a
    }
}

/// Offspring of an evaluated population: tournament-selected pairs, crossover
/// with probability `p_c` (two-point on the integer segment, uniform on the
/// depth segment), then with probability `p_m` per child polynomial mutation
/// of the integer genes and a depth resample, each locus firing at rate
/// `1 / segment length`.
pub fn offspring_generation<R: Rng + ?Sized>(parents: &Population, space: &SearchSpace, evo: &EvolutionConfig, rng: &mut R) -> Result<Population> {
    let fitness = parents
        .fitness
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("offspring generation needs evaluated parents".into()))?;
    let ranked = rank_and_crowd(fitness);
    let n = parents.len();
    let p_gene = 1.0 / space.integer_len() as f64;
    let p_stage = 1.0 / space.num_stages() as f64;
    let mut children = Vec::with_capacity(n);
    while children.len() < n {
        let a = &parents.members[tournament(&ranked, rng)];
        let b = &parents.members[tournament(&ranked, rng)];
        let (mut c1, mut c2) = (a.clone(), b.clone());
        if rng.gen_bool(evo.p_c) {
            let (x1, x2) = two_point_crossover_int(&c1, &c2, space, rng)?;
            (c1, c2) = uniform_crossover_depth(&x1, &x2, space, rng)?;
        }
        for c in [c1, c2] {
            let c = if rng.gen_bool(evo.p_m) {
                let m = polynomial_mutation_int(&c, space, evo.eta_m, p_gene, rng);
                bitflip_mutation_depth(&m, space, p_stage, rng)
            } else {
                c
            };
            if children.len() < n {
                children.push(c);
            }
        }
    }
    Ok(Population::new(children))
}

#[derive(Debug, Clone)]
pub struct PopulationEval {
    pub fitness: FitnessMatrix,
    /// Members that received a penalty row.
    pub failed: Vec<usize>,
    /// Distinct genotypes dispatched.
    pub dispatched: usize,
    pub records: Vec<TaskRecord>,
    pub retries: usize,
}

/// Evaluates `members` through the engine. Duplicate genotypes are
/// dispatched once and share their fitness row.
pub fn evaluate_population(
    members: &[Genotype],
    space: &SearchSpace,
    snapshot: &SupernetParams,
    val: &[Sample],
    pool: &DevicePool,
    engine: &EngineOptions,
) -> Result<PopulationEval> {
    let mut slot: HashMap<&Genotype, usize> = HashMap::new();
    let mut unique: Vec<&Genotype> = Vec::new();
    let map: Vec<usize> = members
        .iter()
        .map(|g| {
            *slot.entry(g).or_insert_with(|| {
                unique.push(g);
                unique.len() - 1
            })
        })
        .collect();
    let configs = unique.iter().map(|g| decode(g, space)).collect::<Result<Vec<_>>>()?;
    let ev = evaluate(&configs, snapshot, val, pool, engine)?;
    let rows = map.iter().map(|&u| ev.fitness.rows[u]).collect();
    let failed = map.iter().enumerate().filter(|(_, u)| ev.failed.contains(u)).map(|(i, _)| i).collect();
    Ok(PopulationEval {
        fitness: FitnessMatrix::new(rows)?,
        failed,
        dispatched: unique.len(),
        records: ev.records,
        retries: ev.retries,
    })
}

/// Binds the search loop to a frozen supernet and a device pool.
pub struct Searcher<'a> {
    pub space: &'a SearchSpace,
    pub snapshot: &'a SupernetParams,
    pub val: &'a [Sample],
    pub pool: &'a DevicePool,
    pub engine: &'a EngineOptions,
    pub evolution: EvolutionConfig,
}

fn archive_insert(archive: &mut ParetoArchive, members: &[Genotype], fitness: &FitnessMatrix, failed: &[usize]) {
    for (i, (g, f)) in members.iter().zip(&fitness.rows).enumerate() {
        if !failed.contains(&i) {
            archive.insert(g.clone(), *f);
        }
    }
}

impl Searcher<'_> {
    /// Random initial population, evaluated; fixes the hypervolume reference
    /// at 1.1 times the componentwise maximum of the successful rows.
    pub fn init(&self) -> Result<(SearchState, GenerationTelemetry)> {
        self.evolution.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.evolution.seed);
        let members: Vec<Genotype> = (0..self.evolution.pop_size).map(|_| random_genotype(self.space, &mut rng)).collect();
        let t0 = Instant::now();
        let PopulationEval {
            fitness, failed, records, retries, ..
        } = evaluate_population(&members, self.space, self.snapshot, self.val, self.pool, self.engine)?;
        let ok: Vec<_> = fitness.rows.iter().enumerate().filter(|(i, _)| !failed.contains(i)).map(|(_, r)| *r).collect();
        if ok.is_empty() {
            return Err(Error::IncompleteEvaluation("every member of the initial population failed".into()));
        }
        let reference = HypervolumeReference::from_generation(&ok, 1.1);
        let mut archive = ParetoArchive::default();
        archive_insert(&mut archive, &members, &fitness, &failed);
        let initial_hv = reference.normalized(&archive.objectives()).value;
        let state = SearchState {
            space: self.space.clone(),
            evolution: self.evolution,
            generation: 0,
            population: Population::with_fitness(members, fitness)?,
            archive,
            reference,
            initial_hv,
            trajectory: Vec::new(),
            evaluations: self.evolution.pop_size,
            rng,
        };
        let telemetry = GenerationTelemetry {
            generation: 0,
            wall_s: t0.elapsed().as_secs_f64(),
            retries,
            records,
        };
        Ok((state, telemetry))
    }

    /// Runs one generation: offspring, evaluation, archive update, survival.
    pub fn step(&self, state: &mut SearchState) -> Result<GenerationTelemetry> {
        if state.space != *self.space {
            return Err(Error::SpaceMismatch);
        }
        let t0 = Instant::now();
        let offspring = offspring_generation(&state.population, self.space, &state.evolution, &mut state.rng)?;
        let PopulationEval {
            fitness,
            failed,
            dispatched,
            records,
            retries,
        } = evaluate_population(&offspring.members, self.space, self.snapshot, self.val, self.pool, self.engine)?;
        archive_insert(&mut state.archive, &offspring.members, &fitness, &failed);
        let offspring = Population::with_fitness(offspring.members, fitness)?;
        let union = state.population.union(&offspring)?;
        state.population = survival(&union, state.evolution.pop_size)?;
        state.generation += 1;
        state.evaluations += offspring.len();
        let f = state.population.fitness.clone().expect("survivors carry fitness");
        state.trajectory.push(GenerationRecord {
            generation: state.generation,
            members: state.population.members.clone(),
            front0: fast_nondominated_sort(&f).into_iter().next().unwrap_or_default(),
            fitness: f,
            archive_size: state.archive.len(),
            archive_hv: state.reference.normalized(&state.archive.objectives()).value,
            evaluations: state.evaluations,
            dispatched,
            failed,
        });
        Ok(GenerationTelemetry {
            generation: state.generation,
            wall_s: t0.elapsed().as_secs_f64(),
            retries,
            records,
        })
    }

    /// Continues until `until` generations are complete (capped at the
    /// configured count), calling `on_generation` after each one.
    pub fn run(&self, state: &mut SearchState, until: usize, mut on_generation: impl FnMut(&SearchState, &GenerationTelemetry) -> Result<()>) -> Result<()> {
        while state.generation < until.min(state.evolution.generations) {
            let t = self.step(state)?;
            on_generation(state, &t)?;
        }
        Ok(())
    }
}

/// Full search from a random initial population.
pub fn search(searcher: &Searcher<'_>) -> Result<SearchState> {
    let (mut state, _) = searcher.init()?;
    searcher.run(&mut state, usize::MAX, |_, _| Ok(()))?;
    Ok(state)
}
