use serde::{Deserialize, Serialize};

use super::params::{NetSlots, ParamId, SubnetView, SupernetParams};
use super::schedule::TrainMask;
use super::task::Sample;
use crate::distill::dct::{masked_token_spectrum, spectrum_mask};
use crate::distill::{project_on_tape, unpatchify, LossComponents, LossWeights, ProjectionVars, TokenGrid};
use crate::error::{DivergenceReport, Error, Result};
use crate::search_space::ArchConfig;
use crate::tape::{Tape, Var};
use crate::tensor::Matrix;

/// Ground-truth loss of the dense task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GtLoss {
    Mse,
    Silog { lambda: f64 },
}

/// Training objective of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// Ground-truth loss only.
    Task(GtLoss),
    /// Binary cross-entropy on the pretraining label.
    Classify,
    /// Full distillation objective.
    Distill {
        gt: GtLoss,
        weights: LossWeights,
        high_pass: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Output of each stage (`tokens x d_model`).
    pub stage_features: Vec<Matrix>,
    /// Final-stage tokens after global attention.
    pub tokens: TokenGrid,
    /// Full-resolution prediction.
    pub prediction: Matrix,
}

struct Graph {
    stages: Vec<Var>,
    tokens: Var,
    pred: Var,
}

fn bind<'p>(tape: &mut Tape<'p>, view: &SubnetView<'p>, mask: Option<&TrainMask>) -> NetSlots<Var> {
    view.map(|id, m| match mask {
        Some(mask) if mask.allows(id.classes()) => tape.param(*m),
        _ => tape.constant_view(*m),
    })
}

fn build(tape: &mut Tape<'_>, p: &NetSlots<Var>, input: Var) -> Graph {
    let mut h = tape.matmul(input, p.embed);
    h = tape.add_row(h, p.embed_bias);
    let mut stages = Vec::with_capacity(p.stages.len());
    for st in &p.stages {
        if let Some(t) = st.transition {
            h = tape.matmul(h, t);
        }
        for b in &st.blocks {
            // write-state-read: h_t = A h_{t-1} + B x_t, y_t = C h_t
            let content = tape.matmul(h, b.x);
            let written = tape.matmul_nt(content, b.b);
            let state = tape.scan(b.a, written);
            let read = tape.matmul(state, b.c);
            h = tape.add(h, read);
            let mut z = tape.matmul(h, b.w1);
            z = tape.add_row(z, b.b1);
            z = tape.tanh(z);
            z = tape.matmul(z, b.w2);
            z = tape.add_row(z, b.b2);
            h = tape.add(h, z);
        }
        stages.push(h);
    }
    let q = tape.matmul(h, p.attn_q);
    let k = tape.matmul(h, p.attn_k);
    let v = tape.matmul(h, p.attn_v);
    let d = tape.value(q).cols() as f64;
    let scores = tape.matmul_nt(q, k);
    let scores = tape.scale(scores, 1.0 / d.sqrt());
    let attn = tape.softmax_rows(scores);
    let mixed = tape.matmul(attn, v);
    let tokens = tape.add(h, mixed);
    let pred = tape.matmul(tokens, p.head);
    let pred = tape.add_row(pred, p.head_bias);
    Graph { stages, tokens, pred }
}

/// Runs `cfg`'s subnetwork on one input image. Blocks past a stage's depth
/// are skipped, which is the same as running them as identities.
pub fn forward(params: &SupernetParams, cfg: &ArchConfig, image: &Matrix) -> Result<ForwardOutput> {
    let dims = &params.dims;
    if image.shape() != dims.image {
        return Err(Error::Shape(format!("expected {:?} input, got {:?}", dims.image, image.shape())));
    }
    let view = params.slice_view(cfg)?;
    let input = crate::distill::patchify(image, dims.patch)?;
    let mut tape = Tape::inference();
    let p = bind(&mut tape, &view, None);
    let x = tape.constant(input);
    let g = build(&mut tape, &p, x);
    let (gh, gw) = dims.grid();
    Ok(ForwardOutput {
        stage_features: g.stages.iter().map(|&v| tape.to_matrix(v)).collect(),
        tokens: TokenGrid::new(tape.to_matrix(g.tokens), gh, gw)?,
        prediction: unpatchify(&tape.to_matrix(g.pred), dims.patch, dims.image.0, dims.image.1)?,
    })
}

/// Multiply-accumulate count of one inference forward, as recorded by the
/// tape.
pub fn forward_macs(params: &SupernetParams, cfg: &ArchConfig) -> Result<u64> {
    let view = params.slice_view(cfg)?;
    let mut tape = Tape::inference();
    let p = bind(&mut tape, &view, None);
    let x = tape.constant(Matrix::zeros(params.dims.n_tokens(), params.dims.patch_len()));
    build(&mut tape, &p, x);
    Ok(tape.macs())
}

/// Prediction in student patch layout.
pub fn predict_patches(params: &SupernetParams, cfg: &ArchConfig, sample: &Sample) -> Result<Matrix> {
    let view = params.slice_view(cfg)?;
    let mut tape = Tape::inference();
    let p = bind(&mut tape, &view, None);
    let x = tape.constant_view(sample.input.as_ref());
    let g = build(&mut tape, &p, x);
    Ok(tape.to_matrix(g.pred))
}

/// Mean ground-truth MSE of `cfg` over `samples`.
pub fn validation_error(params: &SupernetParams, cfg: &ArchConfig, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("empty validation split".into()));
    }
    let mut total = 0.0;
    for s in samples {
        let pred = predict_patches(params, cfg, s)?;
        total += crate::distill::pseudo_loss(&pred, &s.target)?;
    }
    Ok(total / samples.len() as f64)
}

#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    pub components: LossComponents,
    /// Gradients of the trainable leading slices.
    pub grads: Vec<(ParamId, Matrix)>,
}

fn gt_term(tape: &mut Tape<'_>, pred: Var, target: Var, gt: GtLoss) -> Var {
    match gt {
        GtLoss::Mse => tape.mse(pred, target),
        GtLoss::Silog { lambda } => tape.silog(pred, target, lambda),
    }
}

fn batch_loss<'p>(
    tape: &mut Tape<'p>,
    params: &'p SupernetParams,
    p: &NetSlots<Var>,
    batch: &[&'p Sample],
    objective: &Objective,
) -> Result<(Var, LossComponents)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let dims = &params.dims;
    let inv = 1.0 / batch.len() as f64;
    let mut totals = Vec::with_capacity(batch.len());
    let mut comp = LossComponents::default();
    for s in batch {
        if s.input.shape() != (dims.n_tokens(), dims.patch_len()) {
            return Err(Error::Shape(format!("sample input {:?} does not match the supernet", s.input.shape())));
        }
        let x = tape.constant_view(s.input.as_ref());
        let g = build(tape, p, x);
        let total = match objective {
            Objective::Task(gt) => {
                let target = tape.constant_view(s.target.as_ref());
                let l = gt_term(tape, g.pred, target, *gt);
                comp.gt += inv * tape.scalar(l);
                l
            }
            Objective::Classify => {
                let scores = tape.matmul(g.tokens, p.cls);
                let pooled = tape.mean(scores);
                let logit = tape.add(pooled, p.cls_bias);
                let l = tape.bce_with_logits(logit, s.label);
                comp.gt += inv * tape.scalar(l);
                l
            }
            Objective::Distill { gt, weights, high_pass } => {
                let (th, tw) = s.teacher_tokens.shape.ok_or(Error::MissingShape)?;
                if (th, tw) != dims.teacher_grid || s.teacher_tokens.dim() != dims.teacher_dim {
                    return Err(Error::Shape("teacher tokens do not match the projection".into()));
                }
                let target = tape.constant_view(s.target.as_ref());
                let l_gt = gt_term(tape, g.pred, target, *gt);
                let teacher_pred = tape.constant_view(s.teacher_pred.as_ref());
                let l_pseudo = tape.mse(g.pred, teacher_pred);
                let vars = ProjectionVars {
                    queries: p.proj_queries,
                    w_key: p.proj_key,
                    w_value: p.proj_value,
                };
                let (projected, _) = project_on_tape(tape, g.tokens, vars, dims.proj_heads);
                let teacher = tape.constant_view(s.teacher_tokens.tokens.as_ref());
                let l_spat = tape.mse(projected, teacher);
                let mask = spectrum_mask(th, tw, *high_pass);
                let teacher_spec = tape.constant(masked_token_spectrum(s.teacher_tokens.tokens.as_ref(), th, tw, &mask));
                let student_spec = tape.dct2_tokens(projected, th, tw, mask);
                let l_freq = tape.mse(student_spec, teacher_spec);
                let [a, b, c, d] = weights.coefficients();
                comp.gt += inv * tape.scalar(l_gt);
                comp.pseudo += inv * tape.scalar(l_pseudo);
                comp.spat += inv * tape.scalar(l_spat);
                comp.freq += inv * tape.scalar(l_freq);
                tape.combine(&[(l_gt, a), (l_pseudo, b), (l_spat, c), (l_freq, d)])
            }
        };
        totals.push((total, inv));
    }
    Ok((tape.combine(&totals), comp))
}

/// Batch-mean loss of `cfg` without gradients.
pub fn evaluate_loss(params: &SupernetParams, cfg: &ArchConfig, batch: &[&Sample], objective: &Objective) -> Result<(f64, LossComponents)> {
    if let Objective::Distill { weights, .. } = objective {
        weights.validate()?;
    }
    let view = params.slice_view(cfg)?;
    let mut tape = Tape::inference();
    let p = bind(&mut tape, &view, None);
    let (l, comp) = batch_loss(&mut tape, params, &p, batch, objective)?;
    Ok((tape.scalar(l), comp))
}

/// Loss and gradients of every tensor slice that `mask` leaves trainable.
pub fn loss_and_gradients(
    params: &SupernetParams,
    cfg: &ArchConfig,
    batch: &[&Sample],
    objective: &Objective,
    mask: &TrainMask,
) -> Result<LossEval> {
    if let Objective::Distill { weights, .. } = objective {
        weights.validate()?;
    }
    let view = params.slice_view(cfg)?;
    let mut tape = Tape::new();
    let p = bind(&mut tape, &view, Some(mask));
    let (l, components) = batch_loss(&mut tape, params, &p, batch, objective)?;
    let loss = tape.scalar(l);
    let grads = if loss.is_finite() {
        let g = tape.backward(l);
        let mut out = Vec::new();
        p.for_each(|id, &v| {
            if let Some(m) = g.get(v) {
                out.push((id, m.clone()));
            }
        });
        out
    } else {
        Vec::new()
    };
    Ok(LossEval { loss, components, grads })
}

/// Plain SGD with optional global-norm gradient clipping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sgd {
    pub lr: f64,
    pub clip_norm: Option<f64>,
}

impl Sgd {
    pub fn new(lr: f64) -> Self {
        Self { lr, clip_norm: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub loss: f64,
    pub components: LossComponents,
    pub grad_norm: f64,
}

/// One SGD step on `cfg`'s slice of the supernet. Returns the pre-update
/// loss; a non-finite loss aborts without touching the parameters.
pub fn train_step(
    params: &mut SupernetParams,
    cfg: &ArchConfig,
    batch: &[&Sample],
    objective: &Objective,
    sgd: &Sgd,
    mask: &TrainMask,
) -> Result<StepReport> {
    let eval = loss_and_gradients(params, cfg, batch, objective, mask)?;
    let grad_norm = eval
        .grads
        .iter()
        .map(|(_, g)| g.data().iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if !eval.loss.is_finite() || !grad_norm.is_finite() {
        return Err(Error::Divergence(Box::new(DivergenceReport {
            loss: eval.loss,
            max_abs_param: params.max_abs(),
            grad_norm,
            config: cfg.label(),
        })));
    }
    if sgd.lr != 0.0 {
        let scale = match sgd.clip_norm {
            Some(c) if grad_norm > c => c / grad_norm,
            _ => 1.0,
        };
        for (id, g) in &eval.grads {
            params.tensor_mut(*id).leading_mut(g.rows(), g.cols()).add_scaled(g, -sgd.lr * scale);
        }
    }
    Ok(StepReport {
        loss: eval.loss,
        components: eval.components,
        grad_norm,
    })
}
