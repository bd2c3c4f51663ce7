use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::ParamClass;
use crate::search_space::{ArchConfig, SearchSpace, StageConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dimension {
    DState,
    MlpRatio,
    SsdExpand,
    Depth,
}

impl Dimension {
    /// Unlock order of the progressive schedule.
    pub const ORDER: [Dimension; 4] = [Dimension::DState, Dimension::MlpRatio, Dimension::SsdExpand, Dimension::Depth];

    /// Tensor groups that adapt when this dimension is unlocked.
    pub fn param_class(self) -> ParamClass {
        match self {
            Dimension::DState => ParamClass::State,
            Dimension::MlpRatio => ParamClass::Mlp,
            Dimension::SsdExpand => ParamClass::Content,
            Dimension::Depth => ParamClass::Output,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Adapt,
    Joint,
    Final,
}

/// Candidate values currently available per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveSets {
    pub d_state: Vec<usize>,
    pub ssd_expand: Vec<f64>,
    pub mlp_ratio: Vec<f64>,
    /// Allowed depths per stage.
    pub depth: Vec<Vec<usize>>,
}

fn subset<T: PartialEq>(a: &[T], b: &[T]) -> bool {
    a.iter().all(|x| b.contains(x))
}

impl ActiveSets {
    pub fn maximal(space: &SearchSpace) -> Self {
        Self {
            d_state: vec![*space.d_state.last().unwrap()],
            ssd_expand: vec![*space.ssd_expand.last().unwrap()],
            mlp_ratio: vec![*space.mlp_ratio.last().unwrap()],
            depth: space.max_depth_per_stage.iter().map(|&d| vec![d]).collect(),
        }
    }

    pub fn full(space: &SearchSpace) -> Self {
        Self {
            d_state: space.d_state.clone(),
            ssd_expand: space.ssd_expand.clone(),
            mlp_ratio: space.mlp_ratio.clone(),
            depth: space.max_depth_per_stage.iter().map(|&d| (1..=d).collect()).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &ActiveSets) -> bool {
        subset(&self.d_state, &other.d_state)
            && subset(&self.ssd_expand, &other.ssd_expand)
            && subset(&self.mlp_ratio, &other.mlp_ratio)
            && self.depth.len() == other.depth.len()
            && self.depth.iter().zip(&other.depth).all(|(a, b)| subset(a, b))
    }

    pub fn contains(&self, cfg: &ArchConfig) -> bool {
        cfg.stages.len() == self.depth.len()
            && cfg.stages.iter().enumerate().all(|(s, st)| {
                self.d_state.contains(&st.d_state)
                    && self.ssd_expand.contains(&st.ssd_expand)
                    && self.mlp_ratio.contains(&st.mlp_ratio)
                    && self.depth[s].contains(&st.depth)
            })
    }

    /// Values of `dim` in `self` that are absent from `prev`, with every
    /// other dimension taken from `prev`.
    fn introduced_since(&self, prev: &ActiveSets, dim: Dimension) -> ActiveSets {
        let mut out = prev.clone();
        match dim {
            Dimension::DState => out.d_state = self.d_state.iter().copied().filter(|v| !prev.d_state.contains(v)).collect(),
            Dimension::SsdExpand => {
                out.ssd_expand = self.ssd_expand.iter().copied().filter(|v| !prev.ssd_expand.contains(v)).collect()
            }
            Dimension::MlpRatio => {
                out.mlp_ratio = self.mlp_ratio.iter().copied().filter(|v| !prev.mlp_ratio.contains(v)).collect()
            }
            Dimension::Depth => {
                out.depth = self
                    .depth
                    .iter()
                    .zip(&prev.depth)
                    .map(|(cur, old)| {
                        let new: Vec<usize> = cur.iter().copied().filter(|v| !old.contains(v)).collect();
                        if new.is_empty() {
                            old.clone()
                        } else {
                            new
                        }
                    })
                    .collect()
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub id: usize,
    pub active: ActiveSets,
    /// Dimension unlocked on entry to this phase (none for phase 0).
    pub unlocked: Option<Dimension>,
    /// Sets sampled during adaptation: only the newly introduced values of
    /// the unlocked dimension.
    pub adapt: ActiveSets,
    pub t_adapt: usize,
    pub t_joint: usize,
}

/// Phase sequence with per-phase iteration budgets followed by a final
/// convergence period over the last phase's sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressiveSchedule {
    pub phases: Vec<Phase>,
    pub t_final: usize,
}

/// Which parameters an update may touch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrainMask {
    All,
    Only(Vec<ParamClass>),
}

impl TrainMask {
    pub fn allows(&self, classes: &[ParamClass]) -> bool {
        match self {
            TrainMask::All => true,
            TrainMask::Only(allowed) => classes.iter().any(|c| allowed.contains(c)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulePosition<'a> {
    pub phase: usize,
    pub mode: Mode,
    /// All sets active in the current phase.
    pub active: &'a ActiveSets,
    /// Sets to sample from at this iteration.
    pub sampling: &'a ActiveSets,
    pub mask: TrainMask,
}

impl ProgressiveSchedule {
    /// Maximal configuration first, then `d_state` in two steps (upper half,
    /// then all), then `mlp_ratio`, `ssd_expand` and depth. Dimensions with a
    /// single candidate add no phase.
    pub fn standard(space: &SearchSpace, t_adapt: usize, t_joint: usize, t_final: usize) -> Self {
        let mut phases = Vec::new();
        let mut cur = ActiveSets::maximal(space);
        phases.push(Phase {
            id: 0,
            active: cur.clone(),
            unlocked: None,
            adapt: cur.clone(),
            t_adapt: 0,
            t_joint,
        });
        let mut steps: Vec<(Dimension, ActiveSets)> = Vec::new();
        for dim in Dimension::ORDER {
            let mut next = cur.clone();
            match dim {
                Dimension::DState => {
                    let n = space.d_state.len();
                    if n >= 3 {
                        let mut half = cur.clone();
                        half.d_state = space.d_state[n / 2..].to_vec();
                        steps.push((dim, half));
                    }
                    next.d_state = space.d_state.clone();
                }
                Dimension::MlpRatio => next.mlp_ratio = space.mlp_ratio.clone(),
                Dimension::SsdExpand => next.ssd_expand = space.ssd_expand.clone(),
                Dimension::Depth => next.depth = ActiveSets::full(space).depth,
            }
            steps.push((dim, next.clone()));
            cur = next;
        }
        for (dim, sets) in steps {
            let prev = &phases.last().unwrap().active;
            if sets == *prev {
                continue;
            }
            let adapt = sets.introduced_since(prev, dim);
            phases.push(Phase {
                id: phases.len(),
                active: sets,
                unlocked: Some(dim),
                adapt,
                t_adapt,
                t_joint,
            });
        }
        Self { phases, t_final }
    }

    /// Sampling over the whole space from the first step (no curriculum).
    pub fn uniform(space: &SearchSpace, iters: usize) -> Self {
        let full = ActiveSets::full(space);
        Self {
            phases: vec![Phase {
                id: 0,
                active: full.clone(),
                unlocked: None,
                adapt: full,
                t_adapt: 0,
                t_joint: 0,
            }],
            t_final: iters,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let s = |t: usize| (t as f64 * factor).round() as usize;
        let mut out = self.clone();
        for p in &mut out.phases {
            p.t_adapt = s(p.t_adapt);
            p.t_joint = s(p.t_joint);
        }
        out.t_final = s(out.t_final);
        out
    }

    pub fn total_iters(&self) -> usize {
        self.phases.iter().map(|p| p.t_adapt + p.t_joint).sum::<usize>() + self.t_final
    }

    /// Schedule state at `iter`; iterations past the end report final mode.
    pub fn active_sets(&self, iter: usize) -> SchedulePosition<'_> {
        let mut start = 0;
        for p in &self.phases {
            if iter < start + p.t_adapt {
                let dim = p.unlocked.expect("phase 0 has no adaptation");
                return SchedulePosition {
                    phase: p.id,
                    mode: Mode::Adapt,
                    active: &p.active,
                    sampling: &p.adapt,
                    mask: TrainMask::Only(vec![dim.param_class()]),
                };
            }
            if iter < start + p.t_adapt + p.t_joint {
                return SchedulePosition {
                    phase: p.id,
                    mode: Mode::Joint,
                    active: &p.active,
                    sampling: &p.active,
                    mask: TrainMask::All,
                };
            }
            start += p.t_adapt + p.t_joint;
        }
        let last = self.phases.last().expect("schedule has no phases");
        SchedulePosition {
            phase: last.id,
            mode: Mode::Final,
            active: &last.active,
            sampling: &last.active,
            mask: TrainMask::All,
        }
    }
}

/// Draws each dimension of every stage independently and uniformly from the
/// active sets.
pub fn sample_uniform<R: Rng + ?Sized>(active: &ActiveSets, rng: &mut R) -> ArchConfig {
    ArchConfig {
        stages: active
            .depth
            .iter()
            .map(|depths| StageConfig {
                d_state: *active.d_state.choose(rng).unwrap(),
                ssd_expand: *active.ssd_expand.choose(rng).unwrap(),
                mlp_ratio: *active.mlp_ratio.choose(rng).unwrap(),
                depth: *depths.choose(rng).unwrap(),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn phase_boundaries() {
        let space = SearchSpace::desk_scale();
        let s = ProgressiveSchedule::standard(&space, 5, 10, 7);
        assert_eq!(s.phases.len(), 6);
        let p0 = s.active_sets(0);
        assert_eq!((p0.phase, p0.mode), (0, Mode::Joint));
        assert_eq!(*p0.active, ActiveSets::maximal(&space));
        let p1 = s.active_sets(10);
        assert_eq!((p1.phase, p1.mode), (1, Mode::Adapt));
        assert_eq!(p1.sampling.d_state, vec![6]);
        assert_eq!(p1.mask, TrainMask::Only(vec![ParamClass::State]));
        assert_eq!(s.active_sets(15).mode, Mode::Joint);
        assert_eq!(s.total_iters(), 10 + 5 * 15 + 7);
        let end = s.active_sets(s.total_iters() + 100);
        assert_eq!(end.mode, Mode::Final);
        assert_eq!(*end.active, ActiveSets::full(&space));
    }

    #[test]
    fn sets_expand_monotonically() {
        let space = SearchSpace::desk_scale();
        let s = ProgressiveSchedule::standard(&space, 2, 3, 4);
        let mut prev = s.active_sets(0).active.clone();
        for it in 0..=s.total_iters() {
            let pos = s.active_sets(it);
            assert!(prev.is_subset_of(pos.active));
            assert!(pos.sampling.is_subset_of(pos.active));
            prev = pos.active.clone();
        }
    }

    #[test]
    fn phase_zero_samples_maximal() {
        let space = SearchSpace::desk_scale();
        let s = ProgressiveSchedule::standard(&space, 2, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            assert_eq!(sample_uniform(s.active_sets(0).sampling, &mut rng), space.maximal_config());
        }
    }
}
