//! NSGA-II machinery over the (error, latency, MACs) objective triple.
//!
//! All objectives are minimised.

mod archive;
mod hypervolume;

pub use archive::{ArchiveEntry, ParetoArchive};
pub use hypervolume::{hypervolume, hypervolume_points, Hypervolume, HypervolumeReference};

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search_space::Genotype;

pub const NUM_OBJECTIVES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVector {
    pub err: f64,
    pub latency_ms: f64,
    pub macs: f64,
}

impl ObjectiveVector {
    pub fn new(err: f64, latency_ms: f64, macs: f64) -> Self {
        Self { err, latency_ms, macs }
    }

    pub fn to_array(&self) -> [f64; NUM_OBJECTIVES] {
        [self.err, self.latency_ms, self.macs]
    }

    pub fn from_array(v: [f64; NUM_OBJECTIVES]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn get(&self, k: usize) -> f64 {
        self.to_array()[k]
    }

    pub fn has_nan(&self) -> bool {
        self.to_array().iter().any(|x| x.is_nan())
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}

/// Pareto dominance: `a` is no worse everywhere and strictly better somewhere.
pub fn dominates(a: &ObjectiveVector, b: &ObjectiveVector) -> Result<bool> {
    if a.has_nan() || b.has_nan() {
        return Err(Error::InvalidObjective);
    }
    Ok(dominates_slices(&a.to_array(), &b.to_array()))
}

pub(crate) fn dominates_slices(a: &[f64], b: &[f64]) -> bool {
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strictly = true;
        }
    }
    strictly
}

/// Objective rows aligned by population index.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitnessMatrix {
    pub rows: Vec<ObjectiveVector>,
}

impl FitnessMatrix {
    pub fn new(rows: Vec<ObjectiveVector>) -> Result<Self> {
        if rows.iter().any(ObjectiveVector::has_nan) {
            return Err(Error::InvalidObjective);
        }
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Writes `id,err,latency_ms,macs,rank,crowding`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let fronts = fast_nondominated_sort(self);
        let mut rank = vec![0usize; self.len()];
        let mut crowd = vec![0.0f64; self.len()];
        for (r, front) in fronts.iter().enumerate() {
            let objs: Vec<_> = front.iter().map(|&i| self.rows[i]).collect();
            for (&i, d) in front.iter().zip(crowding_distance(&objs)) {
                rank[i] = r;
                crowd[i] = d;
            }
        }
        writeln!(out, "id,err,latency_ms,macs,rank,crowding")?;
        for (i, row) in self.rows.iter().enumerate() {
            writeln!(
                out,
                "{i},{},{},{},{},{}",
                row.err, row.latency_ms, row.macs, rank[i], crowd[i]
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub members: Vec<Genotype>,
    pub fitness: Option<FitnessMatrix>,
}

impl Population {
    pub fn new(members: Vec<Genotype>) -> Self {
        Self { members, fitness: None }
    }

    pub fn with_fitness(members: Vec<Genotype>, fitness: FitnessMatrix) -> Result<Self> {
        if members.len() != fitness.len() {
            return Err(Error::InvalidInput(format!(
                "{} members but {} fitness rows",
                members.len(),
                fitness.len()
            )));
        }
        Ok(Self {
            members,
            fitness: Some(fitness),
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    fn require_fitness(&self) -> Result<&FitnessMatrix> {
        self.fitness
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("population has no fitness".into()))
    }

    /// Concatenates two evaluated populations (`self` first).
    pub fn union(&self, other: &Population) -> Result<Population> {
        let mut members = self.members.clone();
        members.extend(other.members.iter().cloned());
        let mut rows = self.require_fitness()?.rows.clone();
        rows.extend(other.require_fitness()?.rows.iter().copied());
        Population::with_fitness(members, FitnessMatrix { rows })
    }
}

/// Deb's fast non-dominated sort. Each front lists indices in ascending order.
pub fn fast_nondominated_sort(f: &FitnessMatrix) -> Vec<Vec<usize>> {
    let n = f.len();
    let pts: Vec<[f64; NUM_OBJECTIVES]> = f.rows.iter().map(|r| r.to_array()).collect();
    let mut dominated_by_count = vec![0usize; n];
    let mut dominates_list: Vec<Vec<usize>> = vec![Vec::new(); n];
    for p in 0..n {
        for q in (p + 1)..n {
            if dominates_slices(&pts[p], &pts[q]) {
                dominates_list[p].push(q);
                dominated_by_count[q] += 1;
            } else if dominates_slices(&pts[q], &pts[p]) {
                dominates_list[q].push(p);
                dominated_by_count[p] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by_count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &p in &current {
            for &q in &dominates_list[p] {
                dominated_by_count[q] -= 1;
                if dominated_by_count[q] == 0 {
                    next.push(q);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of every point in one front. Boundary points of every
/// objective get infinity; an objective with zero range contributes nothing,
/// not even boundary infinities.
pub fn crowding_distance(front: &[ObjectiveVector]) -> Vec<f64> {
    let n = front.len();
    let mut dist = vec![0.0; n];
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    for k in 0..NUM_OBJECTIVES {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            front[a]
                .get(k)
                .partial_cmp(&front[b].get(k))
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        let lo = front[order[0]].get(k);
        let hi = front[order[n - 1]].get(k);
        let range = hi - lo;
        if range <= 0.0 {
            continue;
        }
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        for w in 1..n - 1 {
            let gap = front[order[w + 1]].get(k) - front[order[w - 1]].get(k);
            dist[order[w]] += gap / range;
        }
    }
    dist
}

/// Rank and crowding distance for every index of `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedFitness {
    pub rank: Vec<usize>,
    pub crowding: Vec<f64>,
    pub fronts: Vec<Vec<usize>>,
}

pub fn rank_and_crowd(f: &FitnessMatrix) -> RankedFitness {
    let fronts = fast_nondominated_sort(f);
    let mut rank = vec![0; f.len()];
    let mut crowding = vec![0.0; f.len()];
    for (r, front) in fronts.iter().enumerate() {
        let objs: Vec<_> = front.iter().map(|&i| f.rows[i]).collect();
        for (&i, d) in front.iter().zip(crowding_distance(&objs)) {
            rank[i] = r;
            crowding[i] = d;
        }
    }
    RankedFitness { rank, crowding, fronts }
}

/// Indices chosen by NSGA-II environmental selection, in selection order.
///
/// Whole fronts are taken in rank order; the straddling front is truncated by
/// descending crowding distance with ties broken by lower population index.
pub fn survival_indices(f: &FitnessMatrix, n_survivors: usize) -> Result<Vec<usize>> {
    if n_survivors > f.len() {
        return Err(Error::InsufficientPopulation {
            requested: n_survivors,
            available: f.len(),
        });
    }
    let mut chosen = Vec::with_capacity(n_survivors);
    for front in fast_nondominated_sort(f) {
        if chosen.len() + front.len() <= n_survivors {
            chosen.extend_from_slice(&front);
            if chosen.len() == n_survivors {
                break;
            }
            continue;
        }
        let objs: Vec<_> = front.iter().map(|&i| f.rows[i]).collect();
        let dist = crowding_distance(&objs);
        let mut order: Vec<usize> = (0..front.len()).collect();
        order.sort_by(|&a, &b| {
            dist[b]
                .partial_cmp(&dist[a])
                .unwrap_or(Ordering::Equal)
                .then(front[a].cmp(&front[b]))
        });
        let remaining = n_survivors - chosen.len();
        chosen.extend(order.into_iter().take(remaining).map(|k| front[k]));
        break;
    }
    Ok(chosen)
}

pub fn survival(union: &Population, n_survivors: usize) -> Result<Population> {
    let f = union.require_fitness()?;
    let idx = survival_indices(f, n_survivors)?;
    Population::with_fitness(
        idx.iter().map(|&i| union.members[i].clone()).collect(),
        FitnessMatrix {
            rows: idx.iter().map(|&i| f.rows[i]).collect(),
        },
    )
}

/// Front 0 of an evaluated population as an archive (duplicate genotypes kept once).
pub fn pareto_front(pop: &Population) -> Result<ParetoArchive> {
    let f = pop.require_fitness()?;
    let mut archive = ParetoArchive::default();
    if let Some(front) = fast_nondominated_sort(f).first() {
        for &i in front {
            archive.insert(pop.members[i].clone(), f.rows[i]);
        }
    }
    Ok(archive)
}
