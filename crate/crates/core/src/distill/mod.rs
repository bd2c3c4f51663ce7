//! Dual-domain distillation losses.
//!
//! Student tokens are projected onto the teacher's token grid by a
//! cross-attention module with learnable queries, then aligned to the teacher
//! in the spatial domain (token MSE) and in the frequency domain (MSE between
//! per-channel 2D DCT spectra with the DC coefficient removed). A prediction
//! level consistency term and the ground-truth task loss complete the
//! objective
//!
//! `L = (1 - theta) L_gt + theta L_pseudo + alpha1 L_spat + alpha2 L_freq`.

pub mod dct;
mod teacher;

pub use dct::{dct2, idct2, suppress_dc};
pub use teacher::{patchify, unpatchify, TeacherModel, TeacherOutput};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Matrix;

/// Tokens with optional spatial layout (`h * w == n_tokens`, row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenGrid {
    pub tokens: Matrix,
    pub shape: Option<(usize, usize)>,
}

impl TokenGrid {
    pub fn new(tokens: Matrix, h: usize, w: usize) -> Result<Self> {
        if h * w != tokens.rows() {
            return Err(Error::Shape(format!(
                "{} tokens cannot be laid out as {h}x{w}",
                tokens.rows()
            )));
        }
        Ok(Self {
            tokens,
            shape: Some((h, w)),
        })
    }

    pub fn unshaped(tokens: Matrix) -> Self {
        Self { tokens, shape: None }
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.rows()
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }

    /// Channel `c` as an `h x w` map.
    pub fn channel_map(&self, c: usize) -> Result<Matrix> {
        let (h, w) = self.shape.ok_or(Error::MissingShape)?;
        Ok(Matrix::from_fn(h, w, |i, j| self.tokens.get(i * w + j, c)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub theta: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            theta: 0.5,
            alpha1: 1.0,
            alpha2: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidWeights(format!("theta = {} outside [0, 1]", self.theta)));
        }
        for (name, a) in [("alpha1", self.alpha1), ("alpha2", self.alpha2)] {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::InvalidWeights(format!("{name} = {a} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Coefficients of `(gt, pseudo, spat, freq)`.
    pub fn coefficients(&self) -> [f64; 4] {
        [1.0 - self.theta, self.theta, self.alpha1, self.alpha2]
    }
}

/// The four loss terms of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub gt: f64,
    pub pseudo: f64,
    pub spat: f64,
    pub freq: f64,
}

pub fn total_loss(c: &LossComponents, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    let [a, b, s, f] = w.coefficients();
    Ok(a * c.gt + b * c.pseudo + s * c.spat + f * c.freq)
}

fn mse(a: &Matrix, b: &Matrix, what: &str) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.len() as f64)
}

pub fn spatial_loss(student: &TokenGrid, teacher: &TokenGrid) -> Result<f64> {
    mse(&student.tokens, &teacher.tokens, "spatial loss")
}

pub fn pseudo_loss(student_pred: &Matrix, teacher_pred: &Matrix) -> Result<f64> {
    mse(student_pred, teacher_pred, "pseudo-label loss")
}

/// Frequency-domain alignment with the DC coefficient suppressed.
pub fn freq_loss(student: &TokenGrid, teacher: &TokenGrid) -> Result<f64> {
    freq_loss_masked(student, teacher, None)
}

/// Frequency loss with an optional radial high-pass band: coefficients with
/// `sqrt(u^2 + v^2) < radius` are dropped along with DC.
pub fn freq_loss_masked(student: &TokenGrid, teacher: &TokenGrid, high_pass_radius: Option<f64>) -> Result<f64> {
    let s_shape = student.shape.ok_or(Error::MissingShape)?;
    let t_shape = teacher.shape.ok_or(Error::MissingShape)?;
    if s_shape != t_shape || student.tokens.shape() != teacher.tokens.shape() {
        return Err(Error::Shape("frequency loss operands differ in shape".into()));
    }
    let (h, w) = s_shape;
    let mask = dct::spectrum_mask(h, w, high_pass_radius);
    let mut total = 0.0;
    for c in 0..student.dim() {
        let ss = dct2(&student.channel_map(c)?);
        let ts = dct2(&teacher.channel_map(c)?);
        for i in 0..h {
            for j in 0..w {
                let d = mask.get(i, j) * (ss.get(i, j) - ts.get(i, j));
                total += d * d;
            }
        }
    }
    Ok(total / (h * w * student.dim()) as f64)
}

/// Scale-invariant log loss (`mean(d^2) - lambda mean(d)^2`, `d = log p - log t`).
pub fn silog_loss(pred: &Matrix, target: &Matrix, lambda: f64) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape("silog operands differ in shape".into()));
    }
    if pred.data().iter().chain(target.data()).any(|&v| v <= 0.0) {
        return Err(Error::InvalidInput("silog needs strictly positive values".into()));
    }
    let n = pred.len() as f64;
    let d: Vec<f64> = pred.data().iter().zip(target.data()).map(|(p, t)| p.ln() - t.ln()).collect();
    let mean = d.iter().sum::<f64>() / n;
    let sq = d.iter().map(|x| x * x).sum::<f64>() / n;
    Ok(sq - lambda * mean * mean)
}

/// Learnable query projection from student tokens to the teacher token grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    /// `n_teacher_tokens x d_key`
    pub queries: Matrix,
    /// `d_student x d_key`
    pub w_key: Matrix,
    /// `d_student x d_teacher`
    pub w_value: Matrix,
    pub heads: usize,
    pub target_shape: (usize, usize),
}

impl ProjectionParams {
    pub fn init<R: Rng + ?Sized>(
        d_student: usize,
        d_key: usize,
        d_teacher: usize,
        target_shape: (usize, usize),
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || d_key % heads != 0 || d_teacher % heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "{heads} heads do not divide key dim {d_key} and teacher dim {d_teacher}"
            )));
        }
        let n_t = target_shape.0 * target_shape.1;
        let normal = |fan_in: usize| Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).unwrap();
        let q = normal(d_key);
        let k = normal(d_student);
        Ok(Self {
            queries: Matrix::from_fn(n_t, d_key, |_, _| q.sample(rng)),
            w_key: Matrix::from_fn(d_student, d_key, |_, _| k.sample(rng)),
            w_value: Matrix::from_fn(d_student, d_teacher, |_, _| k.sample(rng)),
            heads,
            target_shape,
        })
    }

    fn check(&self, d_student: usize) -> Result<()> {
        let (n_t, d_key) = self.queries.shape();
        if self.w_key.shape() != (d_student, d_key) || self.w_value.rows() != d_student {
            return Err(Error::Shape(format!(
                "projection expects student dim {} / key dim {d_key}, got student dim {d_student}",
                self.w_key.rows()
            )));
        }
        if n_t != self.target_shape.0 * self.target_shape.1 {
            return Err(Error::Shape("query count does not match the target grid".into()));
        }
        if self.heads == 0 || d_key % self.heads != 0 || self.w_value.cols() % self.heads != 0 {
            return Err(Error::Shape("head count does not divide projection dims".into()));
        }
        Ok(())
    }
}

/// Tape variables of a projection module.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionVars {
    pub queries: Var,
    pub w_key: Var,
    pub w_value: Var,
}

/// Records multi-head cross-attention `softmax(Q K^T / sqrt(d_h)) V` per head,
/// heads concatenated along channels. Returns the output and per-head
/// attention matrices.
pub(crate) fn project_on_tape(tape: &mut Tape<'_>, student: Var, p: ProjectionVars, heads: usize) -> (Var, Vec<Var>) {
    let keys = tape.matmul(student, p.w_key);
    let values = tape.matmul(student, p.w_value);
    let d_key = tape.value(p.queries).cols();
    let d_val = tape.value(p.w_value).cols();
    let (hk, hv) = (d_key / heads, d_val / heads);
    let mut outs = Vec::with_capacity(heads);
    let mut attn = Vec::with_capacity(heads);
    for h in 0..heads {
        let (q, k, v) = if heads == 1 {
            (p.queries, keys, values)
        } else {
            (
                tape.col_slice(p.queries, h * hk, hk),
                tape.col_slice(keys, h * hk, hk),
                tape.col_slice(values, h * hv, hv),
            )
        };
        let scores = tape.matmul_nt(q, k);
        let scaled = tape.scale(scores, 1.0 / (hk as f64).sqrt());
        let a = tape.softmax_rows(scaled);
        outs.push(tape.matmul(a, v));
        attn.push(a);
    }
    let out = if heads == 1 { outs[0] } else { tape.concat_cols(&outs) };
    (out, attn)
}

fn run_projection(student: &TokenGrid, proj: &ProjectionParams) -> Result<(TokenGrid, Vec<Matrix>)> {
    proj.check(student.dim())?;
    let mut tape = Tape::inference();
    let s = tape.constant_view(student.tokens.as_ref());
    let vars = ProjectionVars {
        queries: tape.constant_view(proj.queries.as_ref()),
        w_key: tape.constant_view(proj.w_key.as_ref()),
        w_value: tape.constant_view(proj.w_value.as_ref()),
    };
    let (out, attn) = project_on_tape(&mut tape, s, vars, proj.heads);
    let (h, w) = proj.target_shape;
    Ok((
        TokenGrid::new(tape.to_matrix(out), h, w)?,
        attn.iter().map(|&a| tape.to_matrix(a)).collect(),
    ))
}

pub fn project_tokens(student: &TokenGrid, proj: &ProjectionParams) -> Result<TokenGrid> {
    run_projection(student, proj).map(|(g, _)| g)
}

/// Per-head attention matrices (`n_teacher_tokens x n_student_tokens`).
pub fn attention_maps(student: &TokenGrid, proj: &ProjectionParams) -> Result<Vec<Matrix>> {
    run_projection(student, proj).map(|(_, a)| a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_grid(h: usize, w: usize, c: usize, rng: &mut ChaCha8Rng) -> TokenGrid {
        TokenGrid::new(Matrix::from_fn(h * w, c, |_, _| rng.gen_range(-1.0..1.0)), h, w).unwrap()
    }

    #[test]
    fn total_loss_degenerate_weights() {
        let c = LossComponents {
            gt: 1.0,
            pseudo: 2.0,
            spat: 3.0,
            freq: 4.0,
        };
        let w = |theta, alpha1, alpha2| LossWeights { theta, alpha1, alpha2 };
        assert_eq!(total_loss(&c, &w(0.0, 0.0, 0.0)).unwrap(), 1.0);
        assert_eq!(total_loss(&c, &w(1.0, 0.0, 0.0)).unwrap(), 2.0);
        assert!((total_loss(&c, &w(0.5, 0.1, 0.2)).unwrap() - 2.6).abs() < 1e-15);
        assert!(matches!(total_loss(&c, &w(1.3, 0.0, 0.0)), Err(Error::InvalidWeights(_))));
        assert!(matches!(total_loss(&c, &w(0.5, -1.0, 0.0)), Err(Error::InvalidWeights(_))));
    }

    #[test]
    fn spatial_and_pseudo_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_grid(2, 3, 4, &mut rng);
        assert_eq!(spatial_loss(&a, &a).unwrap(), 0.0);
        let shifted = TokenGrid::new(a.tokens.map(|x| x + 2.0), 2, 3).unwrap();
        assert!((spatial_loss(&a, &shifted).unwrap() - 4.0).abs() < 1e-12);
        let p = Matrix::filled(3, 3, 1.5);
        assert_eq!(pseudo_loss(&p, &p).unwrap(), 0.0);
        assert!((pseudo_loss(&p, &p.map(|x| x - 1.0)).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(pseudo_loss(&p, &Matrix::zeros(2, 3)), Err(Error::Shape(_))));
        let b = random_grid(3, 2, 4, &mut rng);
        assert!(spatial_loss(&a, &random_grid(1, 6, 3, &mut rng)).is_err());
        let _ = b;
    }

    #[test]
    fn freq_loss_ignores_channel_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_grid(4, 4, 3, &mut rng);
        assert_eq!(freq_loss(&a, &a).unwrap(), 0.0);
        let mut shifted = a.clone();
        for t in 0..16 {
            for c in 0..3 {
                let v = shifted.tokens.get(t, c) + 0.7 * c as f64 - 1.1;
                shifted.tokens.set(t, c, v);
            }
        }
        assert!(freq_loss(&a, &shifted).unwrap() < 1e-28);
        let unshaped = TokenGrid::unshaped(a.tokens.clone());
        assert!(matches!(freq_loss(&unshaped, &a), Err(Error::MissingShape)));
    }

    #[test]
    fn projection_identity_case() {
        let token = Matrix::from_vec(1, 3, vec![0.3, -1.0, 2.0]);
        let proj = ProjectionParams {
            queries: Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]),
            w_key: Matrix::identity(3),
            w_value: Matrix::identity(3),
            heads: 1,
            target_shape: (1, 1),
        };
        let out = project_tokens(&TokenGrid::new(token.clone(), 1, 1).unwrap(), &proj).unwrap();
        assert_eq!(out.tokens, token);
    }

    #[test]
    fn projection_shapes_and_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for heads in [1, 2, 4] {
            let proj = ProjectionParams::init(6, 8, 12, (3, 4), heads, &mut rng).unwrap();
            for (h, w) in [(1, 1), (2, 5), (4, 4)] {
                let s = random_grid(h, w, 6, &mut rng);
                let out = project_tokens(&s, &proj).unwrap();
                assert_eq!(out.tokens.shape(), (12, 12));
                assert_eq!(out.shape, Some((3, 4)));
                for a in attention_maps(&s, &proj).unwrap() {
                    for i in 0..a.rows() {
                        assert!((a.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    }
                }
            }
            let wrong = random_grid(2, 2, 5, &mut rng);
            assert!(matches!(project_tokens(&wrong, &proj), Err(Error::Shape(_))));
        }
    }

    #[test]
    fn silog_basics() {
        let p = Matrix::filled(2, 2, 2.0);
        assert!(silog_loss(&p, &p, 0.85).unwrap().abs() < 1e-15);
        // a global scale only changes mean(d); with lambda = 1 it cancels
        assert!(silog_loss(&p.map(|x| 3.0 * x), &p, 1.0).unwrap().abs() < 1e-12);
        assert!(silog_loss(&Matrix::zeros(2, 2), &p, 0.5).is_err());
    }
}
