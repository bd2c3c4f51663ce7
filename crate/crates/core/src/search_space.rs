//! The four-dimensional hybrid search space, its genotype codec and the
//! segment-specific genetic operators.
//!
//! A genotype has two segments:
//! * an integer segment holding one `(d_state, ssd_expand, mlp_ratio)`
//!   candidate-index triple per encoder stage;
//! * a binary depth segment with `max_depth` bits per stage, where the active
//!   blocks always form a prefix (block `b` is active only if `b - 1` is).

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Genes per stage in the integer segment.
pub const GENES_PER_STAGE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub d_state: Vec<usize>,
    pub ssd_expand: Vec<f64>,
    pub mlp_ratio: Vec<f64>,
    pub max_depth_per_stage: Vec<usize>,
}

impl SearchSpace {
    /// Literal candidate sets of the full-scale space.
    pub fn full_scale(max_depth_per_stage: Vec<usize>) -> Self {
        Self {
            d_state: vec![16, 32, 48, 64],
            ssd_expand: vec![0.5, 1.0, 2.0, 3.0, 4.0],
            mlp_ratio: vec![0.5, 1.0, 2.0, 3.0, 3.5, 4.0],
            max_depth_per_stage,
        }
    }

    /// Desk-scale space: state sizes scaled by 1/8, ratios unchanged,
    /// four stages with depths `[2, 2, 4, 2]`.
    pub fn desk_scale() -> Self {
        Self {
            d_state: vec![2, 4, 6, 8],
            ..Self::full_scale(vec![2, 2, 4, 2])
        }
    }

    pub fn num_stages(&self) -> usize {
        self.max_depth_per_stage.len()
    }

    pub fn integer_len(&self) -> usize {
        GENES_PER_STAGE * self.num_stages()
    }

    pub fn depth_len(&self) -> usize {
        self.max_depth_per_stage.iter().sum()
    }

    /// Number of candidates for integer gene position `locus`.
    pub fn cardinality(&self, locus: usize) -> usize {
        match locus % GENES_PER_STAGE {
            0 => self.d_state.len(),
            1 => self.ssd_expand.len(),
            _ => self.mlp_ratio.len(),
        }
    }

    /// Total number of distinct architectures.
    pub fn size(&self) -> u128 {
        let per_stage = (self.d_state.len() * self.ssd_expand.len() * self.mlp_ratio.len()) as u128;
        self.max_depth_per_stage
            .iter()
            .map(|&d| per_stage * d as u128)
            .product()
    }

    pub fn validate(&self) -> Result<()> {
        fn increasing<T: PartialOrd + Copy>(name: &str, v: &[T], positive: impl Fn(T) -> bool) -> Result<()> {
            if v.is_empty() {
                return Err(Error::InvalidSpace(format!("{name} candidate list is empty")));
            }
            if !v.iter().all(|&x| positive(x)) {
                return Err(Error::InvalidSpace(format!("{name} candidates must be positive")));
            }
            if v.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidSpace(format!("{name} candidates must be strictly increasing")));
            }
            Ok(())
        }
        increasing("d_state", &self.d_state, |x| x > 0)?;
        increasing("ssd_expand", &self.ssd_expand, |x| x > 0.0 && x.is_finite())?;
        increasing("mlp_ratio", &self.mlp_ratio, |x| x > 0.0 && x.is_finite())?;
        if self.max_depth_per_stage.is_empty() {
            return Err(Error::InvalidSpace("at least one stage is required".into()));
        }
        if self.max_depth_per_stage.contains(&0) {
            return Err(Error::InvalidSpace("max_depth_per_stage entries must be >= 1".into()));
        }
        Ok(())
    }

    pub fn maximal_config(&self) -> ArchConfig {
        ArchConfig {
            stages: self
                .max_depth_per_stage
                .iter()
                .map(|&depth| StageConfig {
                    d_state: *self.d_state.last().unwrap(),
                    ssd_expand: *self.ssd_expand.last().unwrap(),
                    mlp_ratio: *self.mlp_ratio.last().unwrap(),
                    depth,
                })
                .collect(),
        }
    }

    pub fn minimal_config(&self) -> ArchConfig {
        ArchConfig {
            stages: (0..self.num_stages())
                .map(|_| StageConfig {
                    d_state: self.d_state[0],
                    ssd_expand: self.ssd_expand[0],
                    mlp_ratio: self.mlp_ratio[0],
                    depth: 1,
                })
                .collect(),
        }
    }

    /// Every architecture in the space, in lexicographic genotype order.
    /// Intended for small spaces used as exhaustive oracles.
    pub fn enumerate(&self) -> Vec<ArchConfig> {
        let mut per_stage: Vec<Vec<StageConfig>> = Vec::new();
        for &max_depth in &self.max_depth_per_stage {
            let mut opts = Vec::new();
            for &d_state in &self.d_state {
                for &ssd_expand in &self.ssd_expand {
                    for &mlp_ratio in &self.mlp_ratio {
                        for depth in 1..=max_depth {
                            opts.push(StageConfig {
                                d_state,
                                ssd_expand,
                                mlp_ratio,
                                depth,
                            });
                        }
                    }
                }
            }
            per_stage.push(opts);
        }
        let mut out = vec![Vec::<StageConfig>::new()];
        for opts in per_stage {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    opts.iter().map(move |s| {
                        let mut p = prefix.clone();
                        p.push(s.clone());
                        p
                    })
                })
                .collect();
        }
        out.into_iter().map(|stages| ArchConfig { stages }).collect()
    }

    fn stage_depth_slice<'a>(&self, bits: &'a [bool], stage: usize) -> &'a [bool] {
        let start: usize = self.max_depth_per_stage[..stage].iter().sum();
        &bits[start..start + self.max_depth_per_stage[stage]]
    }
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self::desk_scale()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub d_state: usize,
    pub ssd_expand: f64,
    pub mlp_ratio: f64,
    pub depth: usize,
}

/// A decoded architecture: one entry per encoder stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub stages: Vec<StageConfig>,
}

impl ArchConfig {
    /// Short human-readable form, e.g. `8/4/4x2|...`.
    pub fn label(&self) -> String {
        self.stages
            .iter()
            .map(|s| format!("{}/{}/{}x{}", s.d_state, s.ssd_expand, s.mlp_ratio, s.depth))
            .collect::<Vec<_>>()
            .join("|")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Genotype {
    pub integer: Vec<usize>,
    pub depth: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct GenotypeRepr {
    integer: Vec<usize>,
    depth: String,
}

impl Serialize for Genotype {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GenotypeRepr {
            integer: self.integer.clone(),
            depth: self.depth_bit_string(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Genotype {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = GenotypeRepr::deserialize(d)?;
        let depth = repr
            .depth
            .chars()
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                other => Err(serde::de::Error::custom(format!("invalid depth bit {other:?}"))),
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Genotype {
            integer: repr.integer,
            depth,
        })
    }
}

impl Genotype {
    pub fn depth_bit_string(&self) -> String {
        self.depth.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    /// Active depth per stage, assuming the prefix invariant holds.
    pub fn stage_depths(&self, space: &SearchSpace) -> Vec<usize> {
        (0..space.num_stages())
            .map(|s| space.stage_depth_slice(&self.depth, s).iter().filter(|&&b| b).count())
            .collect()
    }

    fn set_stage_depths(&mut self, space: &SearchSpace, depths: &[usize]) {
        self.depth = prefix_bits(space, depths);
    }
}

fn prefix_bits(space: &SearchSpace, depths: &[usize]) -> Vec<bool> {
    space
        .max_depth_per_stage
        .iter()
        .zip(depths)
        .flat_map(|(&max, &d)| (0..max).map(move |b| b < d))
        .collect()
}

fn check_shape(g: &Genotype, space: &SearchSpace) -> bool {
    g.integer.len() == space.integer_len() && g.depth.len() == space.depth_len()
}

/// Reason a genotype is invalid for `space`, if any.
pub fn check(g: &Genotype, space: &SearchSpace) -> Option<String> {
    if !check_shape(g, space) {
        return Some(format!(
            "expected {} integer genes and {} depth bits, got {} and {}",
            space.integer_len(),
            space.depth_len(),
            g.integer.len(),
            g.depth.len()
        ));
    }
    for (locus, &gene) in g.integer.iter().enumerate() {
        if gene >= space.cardinality(locus) {
            return Some(format!("gene {locus} = {gene} outside [0, {})", space.cardinality(locus)));
        }
    }
    for s in 0..space.num_stages() {
        let bits = space.stage_depth_slice(&g.depth, s);
        if !bits[0] {
            return Some(format!("stage {s} has no active block"));
        }
        if bits.windows(2).any(|w| !w[0] && w[1]) {
            return Some(format!("stage {s} depth bits are not a prefix"));
        }
    }
    None
}

pub fn validate(g: &Genotype, space: &SearchSpace) -> bool {
    check(g, space).is_none()
}

pub fn decode(g: &Genotype, space: &SearchSpace) -> Result<ArchConfig> {
    if let Some(reason) = check(g, space) {
        return Err(Error::InvalidGenotype(reason));
    }
    let depths = g.stage_depths(space);
    let stages = g
        .integer
        .chunks(GENES_PER_STAGE)
        .zip(depths)
        .map(|(genes, depth)| StageConfig {
            d_state: space.d_state[genes[0]],
            ssd_expand: space.ssd_expand[genes[1]],
            mlp_ratio: space.mlp_ratio[genes[2]],
            depth,
        })
        .collect();
    Ok(ArchConfig { stages })
}

pub fn encode(cfg: &ArchConfig, space: &SearchSpace) -> Result<Genotype> {
    if cfg.stages.len() != space.num_stages() {
        return Err(Error::NotInSearchSpace(format!(
            "config has {} stages, space has {}",
            cfg.stages.len(),
            space.num_stages()
        )));
    }
    fn index_of<T: PartialEq + std::fmt::Debug>(name: &str, set: &[T], v: &T) -> Result<usize> {
        set.iter()
            .position(|c| c == v)
            .ok_or_else(|| Error::NotInSearchSpace(format!("{name} = {v:?} not in {set:?}")))
    }
    let mut integer = Vec::with_capacity(space.integer_len());
    let mut depths = Vec::with_capacity(space.num_stages());
    for (s, st) in cfg.stages.iter().enumerate() {
        integer.push(index_of("d_state", &space.d_state, &st.d_state)?);
        integer.push(index_of("ssd_expand", &space.ssd_expand, &st.ssd_expand)?);
        integer.push(index_of("mlp_ratio", &space.mlp_ratio, &st.mlp_ratio)?);
        if st.depth == 0 || st.depth > space.max_depth_per_stage[s] {
            return Err(Error::NotInSearchSpace(format!(
                "stage {s} depth {} outside [1, {}]",
                st.depth, space.max_depth_per_stage[s]
            )));
        }
        depths.push(st.depth);
    }
    Ok(Genotype {
        integer,
        depth: prefix_bits(space, &depths),
    })
}

pub fn random_genotype<R: Rng + ?Sized>(space: &SearchSpace, rng: &mut R) -> Genotype {
    let integer = (0..space.integer_len())
        .map(|locus| rng.gen_range(0..space.cardinality(locus)))
        .collect();
    let depths: Vec<usize> = space
        .max_depth_per_stage
        .iter()
        .map(|&max| rng.gen_range(1..=max))
        .collect();
    Genotype {
        integer,
        depth: prefix_bits(space, &depths),
    }
}

fn require_pair(a: &Genotype, b: &Genotype, space: &SearchSpace) -> Result<()> {
    if !validate(a, space) || !validate(b, space) {
        return Err(Error::SpaceMismatch);
    }
    Ok(())
}

/// Two-point crossover on the integer segment with explicit cut points:
/// genes in `[cut_a, cut_b)` are exchanged. Cuts may split a stage's triple.
pub fn two_point_crossover_int_at(
    a: &Genotype,
    b: &Genotype,
    space: &SearchSpace,
    cut_a: usize,
    cut_b: usize,
) -> Result<(Genotype, Genotype)> {
    require_pair(a, b, space)?;
    if cut_a > cut_b || cut_b > space.integer_len() {
        return Err(Error::InvalidInput(format!("bad cut points ({cut_a}, {cut_b})")));
    }
    let (mut c1, mut c2) = (a.clone(), b.clone());
    c1.integer[cut_a..cut_b].copy_from_slice(&b.integer[cut_a..cut_b]);
    c2.integer[cut_a..cut_b].copy_from_slice(&a.integer[cut_a..cut_b]);
    Ok((c1, c2))
}

pub fn two_point_crossover_int<R: Rng + ?Sized>(
    a: &Genotype,
    b: &Genotype,
    space: &SearchSpace,
    rng: &mut R,
) -> Result<(Genotype, Genotype)> {
    let len = space.integer_len();
    let x = rng.gen_range(0..=len);
    let mut y = rng.gen_range(0..len.max(1));
    if y >= x {
        y += 1;
    }
    let (lo, hi) = if x < y { (x, y) } else { (y, x) };
    two_point_crossover_int_at(a, b, space, lo, hi.min(len))
}

/// Polynomial mutation applied in candidate-index space.
///
/// Each gene fires with probability `p_gene`. The continuous perturbation is
/// rounded to the nearest index; when that lands back on the current index the
/// gene moves one step in the perturbation's direction (or inward at a bound),
/// so a fired mutation always changes a gene that has an alternative value.
pub fn polynomial_mutation_int<R: Rng + ?Sized>(
    g: &Genotype,
    space: &SearchSpace,
    eta_m: f64,
    p_gene: f64,
    rng: &mut R,
) -> Genotype {
    let mut out = g.clone();
    for (locus, gene) in out.integer.iter_mut().enumerate() {
        if !rng.gen_bool(p_gene.clamp(0.0, 1.0)) {
            continue;
        }
        let n = space.cardinality(locus);
        if n < 2 {
            continue;
        }
        let hi = (n - 1) as f64;
        let x = *gene as f64;
        let u: f64 = rng.gen();
        let delta = polynomial_delta(x, 0.0, hi, eta_m, u);
        let moved = (x + delta * hi).clamp(0.0, hi);
        let mut idx = moved.round() as i64;
        if idx == *gene as i64 {
            let dir: i64 = if delta > 0.0 {
                1
            } else if delta < 0.0 {
                -1
            } else if *gene == 0 {
                1
            } else {
                -1
            };
            idx += dir;
            if idx < 0 || idx > hi as i64 {
                idx = *gene as i64 - dir;
            }
        }
        *gene = idx as usize;
    }
    out
}

/// Bounded polynomial perturbation (as a fraction of the range) for `x` in `[lo, hi]`.
fn polynomial_delta(x: f64, lo: f64, hi: f64, eta: f64, u: f64) -> f64 {
    let span = hi - lo;
    let d1 = (x - lo) / span;
    let d2 = (hi - x) / span;
    let pow = 1.0 / (eta + 1.0);
    if u < 0.5 {
        let xy = 1.0 - d1;
        let val = 2.0 * u + (1.0 - 2.0 * u) * xy.powf(eta + 1.0);
        val.powf(pow) - 1.0
    } else {
        let xy = 1.0 - d2;
        let val = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * xy.powf(eta + 1.0);
        1.0 - val.powf(pow)
    }
}

/// Uniform crossover on the depth segment, operating on per-stage depth counts
/// so both children keep prefix-form depth bits.
pub fn uniform_crossover_depth<R: Rng + ?Sized>(
    a: &Genotype,
    b: &Genotype,
    space: &SearchSpace,
    rng: &mut R,
) -> Result<(Genotype, Genotype)> {
    require_pair(a, b, space)?;
    let mut da = a.stage_depths(space);
    let mut db = b.stage_depths(space);
    for s in 0..space.num_stages() {
        if rng.gen_bool(0.5) {
            std::mem::swap(&mut da[s], &mut db[s]);
        }
    }
    let (mut c1, mut c2) = (a.clone(), b.clone());
    c1.set_stage_depths(space, &da);
    c2.set_stage_depths(space, &db);
    Ok((c1, c2))
}

/// Per stage, with probability `p_stage`, resamples the depth uniformly among
/// the other legal values.
pub fn bitflip_mutation_depth<R: Rng + ?Sized>(
    g: &Genotype,
    space: &SearchSpace,
    p_stage: f64,
    rng: &mut R,
) -> Genotype {
    let mut depths = g.stage_depths(space);
    for (s, depth) in depths.iter_mut().enumerate() {
        if !rng.gen_bool(p_stage.clamp(0.0, 1.0)) {
            continue;
        }
        let max = space.max_depth_per_stage[s];
        if max < 2 {
            continue;
        }
        let mut d = rng.gen_range(1..max);
        if d >= *depth {
            d += 1;
        }
        *depth = d;
    }
    let mut out = g.clone();
    out.set_stage_depths(space, &depths);
    out
}
