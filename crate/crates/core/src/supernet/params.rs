use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::distill::ProjectionParams;
use crate::error::{Error, Result};
use crate::search_space::{ArchConfig, SearchSpace, StageConfig};
use crate::tensor::{MatMut, MatRef, Matrix};

/// Fixed (non-searchable) sizes of a supernet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupernetDims {
    pub image: (usize, usize),
    pub patch: usize,
    pub d_model: Vec<usize>,
    pub teacher_grid: (usize, usize),
    pub teacher_dim: usize,
    pub proj_key_dim: usize,
    pub proj_heads: usize,
}

impl SupernetDims {
    pub fn grid(&self) -> (usize, usize) {
        (self.image.0 / self.patch, self.image.1 / self.patch)
    }

    pub fn n_tokens(&self) -> usize {
        let (h, w) = self.grid();
        h * w
    }

    pub fn patch_len(&self) -> usize {
        self.patch * self.patch
    }

    pub fn d_last(&self) -> usize {
        *self.d_model.last().unwrap()
    }

    pub fn validate(&self, space: &SearchSpace) -> Result<()> {
        let (h, w) = self.image;
        if self.patch == 0 || h % self.patch != 0 || w % self.patch != 0 {
            return Err(Error::InvalidConfig(format!("patch {} does not tile {h}x{w}", self.patch)));
        }
        if self.d_model.len() != space.num_stages() {
            return Err(Error::InvalidConfig(format!(
                "{} d_model entries for {} stages",
                self.d_model.len(),
                space.num_stages()
            )));
        }
        if self.d_model.contains(&0) || self.teacher_dim == 0 || self.proj_key_dim == 0 {
            return Err(Error::InvalidConfig("model widths must be positive".into()));
        }
        if self.proj_heads == 0 || self.proj_key_dim % self.proj_heads != 0 || self.teacher_dim % self.proj_heads != 0 {
            return Err(Error::InvalidConfig("projection heads must divide key and teacher dims".into()));
        }
        Ok(())
    }
}

/// Hidden width `max(1, round(ratio * d))` of an expanded projection.
pub fn expanded_width(ratio: f64, d: usize) -> usize {
    ((ratio * d as f64).round() as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BlockTensor {
    /// State transition `A` (`d_state x d_state`).
    A,
    /// Write projection `B` (`d_state x expand`).
    B,
    /// Read projection `C` (`d_state x d_model`).
    C,
    /// Content projection `X` (`d_model x expand`).
    X,
    W1,
    B1,
    W2,
    B2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamId {
    Embed,
    EmbedBias,
    Transition(usize),
    Block {
        stage: usize,
        block: usize,
        tensor: BlockTensor,
    },
    AttnQ,
    AttnK,
    AttnV,
    Head,
    HeadBias,
    Cls,
    ClsBias,
    ProjQueries,
    ProjKey,
    ProjValue,
}

/// Groups of tensors that share a searchable dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamClass {
    Embedding,
    State,
    Content,
    Mlp,
    Output,
}

impl ParamId {
    pub fn classes(&self) -> &'static [ParamClass] {
        use BlockTensor::*;
        match self {
            ParamId::Embed | ParamId::EmbedBias | ParamId::Transition(_) => &[ParamClass::Embedding],
            ParamId::Block { tensor, .. } => match tensor {
                A | C => &[ParamClass::State],
                B => &[ParamClass::State, ParamClass::Content],
                X => &[ParamClass::Content],
                W1 | B1 | W2 | B2 => &[ParamClass::Mlp],
            },
            _ => &[ParamClass::Output],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSlots<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub x: T,
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSlots<T> {
    /// Width change from the previous stage (absent on stage 0).
    pub transition: Option<T>,
    pub blocks: Vec<BlockSlots<T>>,
}

/// One value per supernet tensor, laid out like the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSlots<T> {
    pub embed: T,
    pub embed_bias: T,
    pub stages: Vec<StageSlots<T>>,
    pub attn_q: T,
    pub attn_k: T,
    pub attn_v: T,
    pub head: T,
    pub head_bias: T,
    pub cls: T,
    pub cls_bias: T,
    pub proj_queries: T,
    pub proj_key: T,
    pub proj_value: T,
}

impl<T> BlockSlots<T> {
    fn map<'a, U>(&'a self, stage: usize, block: usize, f: &mut impl FnMut(ParamId, &'a T) -> U) -> BlockSlots<U> {
        let id = |tensor| ParamId::Block { stage, block, tensor };
        BlockSlots {
            a: f(id(BlockTensor::A), &self.a),
            b: f(id(BlockTensor::B), &self.b),
            c: f(id(BlockTensor::C), &self.c),
            x: f(id(BlockTensor::X), &self.x),
            w1: f(id(BlockTensor::W1), &self.w1),
            b1: f(id(BlockTensor::B1), &self.b1),
            w2: f(id(BlockTensor::W2), &self.w2),
            b2: f(id(BlockTensor::B2), &self.b2),
        }
    }

    fn map_mut<'a, U>(
        &'a mut self,
        stage: usize,
        block: usize,
        f: &mut impl FnMut(ParamId, &'a mut T) -> U,
    ) -> BlockSlots<U> {
        let id = |tensor| ParamId::Block { stage, block, tensor };
        BlockSlots {
            a: f(id(BlockTensor::A), &mut self.a),
            b: f(id(BlockTensor::B), &mut self.b),
            c: f(id(BlockTensor::C), &mut self.c),
            x: f(id(BlockTensor::X), &mut self.x),
            w1: f(id(BlockTensor::W1), &mut self.w1),
            b1: f(id(BlockTensor::B1), &mut self.b1),
            w2: f(id(BlockTensor::W2), &mut self.w2),
            b2: f(id(BlockTensor::B2), &mut self.b2),
        }
    }
}

impl<T> NetSlots<T> {
    pub fn map<'a, U>(&'a self, mut f: impl FnMut(ParamId, &'a T) -> U) -> NetSlots<U> {
        NetSlots {
            embed: f(ParamId::Embed, &self.embed),
            embed_bias: f(ParamId::EmbedBias, &self.embed_bias),
            stages: self
                .stages
                .iter()
                .enumerate()
                .map(|(s, st)| StageSlots {
                    transition: st.transition.as_ref().map(|t| f(ParamId::Transition(s), t)),
                    blocks: st.blocks.iter().enumerate().map(|(b, bl)| bl.map(s, b, &mut f)).collect(),
                })
                .collect(),
            attn_q: f(ParamId::AttnQ, &self.attn_q),
            attn_k: f(ParamId::AttnK, &self.attn_k),
            attn_v: f(ParamId::AttnV, &self.attn_v),
            head: f(ParamId::Head, &self.head),
            head_bias: f(ParamId::HeadBias, &self.head_bias),
            cls: f(ParamId::Cls, &self.cls),
            cls_bias: f(ParamId::ClsBias, &self.cls_bias),
            proj_queries: f(ParamId::ProjQueries, &self.proj_queries),
            proj_key: f(ParamId::ProjKey, &self.proj_key),
            proj_value: f(ParamId::ProjValue, &self.proj_value),
        }
    }

    pub fn map_mut<'a, U>(&'a mut self, mut f: impl FnMut(ParamId, &'a mut T) -> U) -> NetSlots<U> {
        NetSlots {
            embed: f(ParamId::Embed, &mut self.embed),
            embed_bias: f(ParamId::EmbedBias, &mut self.embed_bias),
            stages: self
                .stages
                .iter_mut()
                .enumerate()
                .map(|(s, st)| StageSlots {
                    transition: st.transition.as_mut().map(|t| f(ParamId::Transition(s), t)),
                    blocks: st
                        .blocks
                        .iter_mut()
                        .enumerate()
                        .map(|(b, bl)| bl.map_mut(s, b, &mut f))
                        .collect(),
                })
                .collect(),
            attn_q: f(ParamId::AttnQ, &mut self.attn_q),
            attn_k: f(ParamId::AttnK, &mut self.attn_k),
            attn_v: f(ParamId::AttnV, &mut self.attn_v),
            head: f(ParamId::Head, &mut self.head),
            head_bias: f(ParamId::HeadBias, &mut self.head_bias),
            cls: f(ParamId::Cls, &mut self.cls),
            cls_bias: f(ParamId::ClsBias, &mut self.cls_bias),
            proj_queries: f(ParamId::ProjQueries, &mut self.proj_queries),
            proj_key: f(ParamId::ProjKey, &mut self.proj_key),
            proj_value: f(ParamId::ProjValue, &mut self.proj_value),
        }
    }

    pub fn for_each(&self, mut f: impl FnMut(ParamId, &T)) {
        self.map(|id, t| f(id, t));
    }
}

/// Shared parameter store sized for the maximal configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupernetParams {
    pub dims: SupernetDims,
    pub space: SearchSpace,
    pub tensors: NetSlots<Matrix>,
}

/// Leading-slice read-only views of one subnetwork.
pub type SubnetView<'a> = NetSlots<MatRef<'a>>;
/// Leading-slice mutable views of one subnetwork; writes land in the supernet.
pub type SubnetViewMut<'a> = NetSlots<MatMut<'a>>;

fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Matrix {
    let n = Normal::new(0.0, std).unwrap();
    Matrix::from_fn(rows, cols, |_, _| n.sample(rng))
}

/// Allocates every tensor at its maximal size with seeded scaled-normal
/// weights and zero biases.
pub fn init_maximal<R: Rng + ?Sized>(space: &SearchSpace, dims: &SupernetDims, rng: &mut R) -> Result<SupernetParams> {
    space.validate()?;
    dims.validate(space)?;
    let n = *space.d_state.last().unwrap();
    let ssd = *space.ssd_expand.last().unwrap();
    let mlp = *space.mlp_ratio.last().unwrap();
    let pp = dims.patch_len();
    let d0 = dims.d_model[0];
    let inv_sqrt = |k: usize| 1.0 / (k as f64).sqrt();

    let embed = gaussian(pp, d0, inv_sqrt(pp), rng);
    let mut stages = Vec::with_capacity(space.num_stages());
    for (s, &max_depth) in space.max_depth_per_stage.iter().enumerate() {
        let d = dims.d_model[s];
        let transition = (s > 0).then(|| gaussian(dims.d_model[s - 1], d, inv_sqrt(dims.d_model[s - 1]), rng));
        let (e, h) = (expanded_width(ssd, d), expanded_width(mlp, d));
        let blocks = (0..max_depth)
            .map(|_| BlockSlots {
                a: gaussian(n, n, 0.6 * inv_sqrt(n), rng),
                b: gaussian(n, e, inv_sqrt(e), rng),
                c: gaussian(n, d, 0.5 * inv_sqrt(n), rng),
                x: gaussian(d, e, inv_sqrt(d), rng),
                w1: gaussian(d, h, inv_sqrt(d), rng),
                b1: Matrix::zeros(1, h),
                w2: gaussian(h, d, 0.5 * inv_sqrt(h), rng),
                b2: Matrix::zeros(1, d),
            })
            .collect();
        stages.push(StageSlots { transition, blocks });
    }
    let dl = dims.d_last();
    let attn_q = gaussian(dl, dl, inv_sqrt(dl), rng);
    let attn_k = gaussian(dl, dl, inv_sqrt(dl), rng);
    let attn_v = gaussian(dl, dl, 0.5 * inv_sqrt(dl), rng);
    let head = gaussian(dl, pp, inv_sqrt(dl), rng);
    let cls = gaussian(dl, 1, inv_sqrt(dl), rng);
    let proj = ProjectionParams::init(dl, dims.proj_key_dim, dims.teacher_dim, dims.teacher_grid, dims.proj_heads, rng)?;
    Ok(SupernetParams {
        dims: dims.clone(),
        space: space.clone(),
        tensors: NetSlots {
            embed,
            embed_bias: Matrix::zeros(1, d0),
            stages,
            attn_q,
            attn_k,
            attn_v,
            head,
            head_bias: Matrix::zeros(1, pp),
            cls,
            cls_bias: Matrix::zeros(1, 1),
            proj_queries: proj.queries,
            proj_key: proj.w_key,
            proj_value: proj.w_value,
        },
    })
}

impl SupernetParams {
    pub fn tensor(&self, id: ParamId) -> &Matrix {
        let t = &self.tensors;
        match id {
            ParamId::Embed => &t.embed,
            ParamId::EmbedBias => &t.embed_bias,
            ParamId::Transition(s) => t.stages[s].transition.as_ref().expect("stage 0 has no transition"),
            ParamId::Block { stage, block, tensor } => {
                let b = &t.stages[stage].blocks[block];
                match tensor {
                    BlockTensor::A => &b.a,
                    BlockTensor::B => &b.b,
                    BlockTensor::C => &b.c,
                    BlockTensor::X => &b.x,
                    BlockTensor::W1 => &b.w1,
                    BlockTensor::B1 => &b.b1,
                    BlockTensor::W2 => &b.w2,
                    BlockTensor::B2 => &b.b2,
                }
            }
            ParamId::AttnQ => &t.attn_q,
            ParamId::AttnK => &t.attn_k,
            ParamId::AttnV => &t.attn_v,
            ParamId::Head => &t.head,
            ParamId::HeadBias => &t.head_bias,
            ParamId::Cls => &t.cls,
            ParamId::ClsBias => &t.cls_bias,
            ParamId::ProjQueries => &t.proj_queries,
            ParamId::ProjKey => &t.proj_key,
            ParamId::ProjValue => &t.proj_value,
        }
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Matrix {
        let mut found = None;
        self.tensors.map_mut(|i, m| {
            if i == id {
                found = Some(m);
            }
        });
        found.expect("unknown parameter id")
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        self.tensors.for_each(|id, _| ids.push(id));
        ids
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.tensors.for_each(|_, m| n += m.len());
        n
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.tensors.for_each(|_, m| ok &= m.is_finite());
        ok
    }

    pub fn max_abs(&self) -> f64 {
        let mut v: f64 = 0.0;
        self.tensors.for_each(|_, m| v = v.max(m.max_abs()));
        v
    }

    pub fn projection(&self) -> ProjectionParams {
        ProjectionParams {
            queries: self.tensors.proj_queries.clone(),
            w_key: self.tensors.proj_key.clone(),
            w_value: self.tensors.proj_value.clone(),
            heads: self.dims.proj_heads,
            target_shape: self.dims.teacher_grid,
        }
    }

    fn check_fits(&self, cfg: &ArchConfig) -> Result<()> {
        if cfg.stages.len() != self.tensors.stages.len() {
            return Err(Error::ConfigTooLarge(format!(
                "{} stages requested, supernet has {}",
                cfg.stages.len(),
                self.tensors.stages.len()
            )));
        }
        for (s, st) in cfg.stages.iter().enumerate() {
            let blocks = &self.tensors.stages[s].blocks;
            let b0 = &blocks[0];
            let (ok_depth, ok_state) = (st.depth >= 1 && st.depth <= blocks.len(), st.d_state >= 1 && st.d_state <= b0.a.rows());
            let (e, h) = self.widths(s, st);
            if !ok_depth || !ok_state || e > b0.x.cols() || h > b0.w1.cols() {
                return Err(Error::ConfigTooLarge(format!("stage {s}: {st:?}")));
            }
        }
        Ok(())
    }

    /// Expanded content width and MLP hidden width for a stage setting.
    pub fn widths(&self, stage: usize, st: &StageConfig) -> (usize, usize) {
        let d = self.dims.d_model[stage];
        (expanded_width(st.ssd_expand, d), expanded_width(st.mlp_ratio, d))
    }

    /// Shape of the leading slice of tensor `id` used by `cfg`.
    pub fn slice_shape(&self, id: ParamId, cfg: &ArchConfig) -> (usize, usize) {
        let full = self.tensor(id).shape();
        match id {
            ParamId::Block { stage, tensor, .. } => {
                let st = &cfg.stages[stage];
                let n = st.d_state;
                let (e, h) = self.widths(stage, st);
                match tensor {
                    BlockTensor::A => (n, n),
                    BlockTensor::B => (n, e),
                    BlockTensor::C => (n, full.1),
                    BlockTensor::X => (full.0, e),
                    BlockTensor::W1 => (full.0, h),
                    BlockTensor::B1 => (1, h),
                    BlockTensor::W2 => (h, full.1),
                    BlockTensor::B2 => full,
                }
            }
            _ => full,
        }
    }

    /// Leading-slice views of every tensor the subnetwork reads. Blocks past a
    /// stage's depth are omitted (they act as identities).
    pub fn slice_view(&self, cfg: &ArchConfig) -> Result<SubnetView<'_>> {
        self.check_fits(cfg)?;
        let mut view = self.tensors.map(|id, m| {
            let (r, c) = self.slice_shape(id, cfg);
            m.leading(r, c)
        });
        for (s, st) in view.stages.iter_mut().enumerate() {
            st.blocks.truncate(cfg.stages[s].depth);
        }
        Ok(view)
    }

    pub fn slice_view_mut(&mut self, cfg: &ArchConfig) -> Result<SubnetViewMut<'_>> {
        self.check_fits(cfg)?;
        let shapes: Vec<(ParamId, (usize, usize))> = self.ids().into_iter().map(|id| (id, self.slice_shape(id, cfg))).collect();
        let mut i = 0;
        let mut view = self.tensors.map_mut(|id, m| {
            debug_assert_eq!(shapes[i].0, id);
            let (r, c) = shapes[i].1;
            i += 1;
            m.leading_mut(r, c)
        });
        for (s, st) in view.stages.iter_mut().enumerate() {
            st.blocks.truncate(cfg.stages[s].depth);
        }
        Ok(view)
    }

    /// Whether `id` is read (at least partially) by `cfg`.
    pub fn is_active(&self, id: ParamId, cfg: &ArchConfig) -> bool {
        match id {
            ParamId::Block { stage, block, .. } => block < cfg.stages[stage].depth,
            _ => true,
        }
    }
}
