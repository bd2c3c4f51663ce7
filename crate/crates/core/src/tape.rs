//! Reverse-mode differentiation over a fixed set of dense matrix operations.
//!
//! A [`Tape`] records every operation of one forward pass. Parameter leaves may
//! borrow strided views of supernet tensors, so slicing a subnetwork never
//! copies weights. `backward` returns gradients for every node that depends on
//! a differentiable leaf; callers scatter leaf gradients back into the full
//! tensors.

use crate::distill::dct::{apply_spectrum_mask, dct2_tokens, masked_token_spectrum};
use crate::tensor::{MatRef, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<'p> {
    Owned(Matrix),
    View(MatRef<'p>),
}

impl<'p> Value<'p> {
    fn as_ref(&self) -> MatRef<'_> {
        match self {
            Value::Owned(m) => m.as_ref(),
            Value::View(v) => *v,
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Tanh(Var),
    Scale(Var, f64),
    SoftmaxRows(Var),
    Scan(Var, Var),
    ColSlice(Var, usize),
    ConcatCols(Vec<Var>),
    Dct2Tokens { x: Var, h: usize, w: usize, mask: Matrix },
    Mse(Var, Var),
    Mean(Var),
    Combine(Vec<(Var, f64)>),
    BceWithLogits(Var, f64),
    Silog(Var, Var, f64),
}

struct Node<'p> {
    value: Value<'p>,
    op: Op,
    requires_grad: bool,
}

pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    macs: u64,
    grad_enabled: bool,
}

pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }
}

impl<'p> Default for Tape<'p> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            macs: 0,
            grad_enabled: true,
        }
    }

    /// A tape that never tracks gradients (inference only).
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    /// Multiply-accumulate operations executed by the recorded matrix products
    /// and state scans.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> MatRef<'_> {
        self.nodes[v.0].value.as_ref()
    }

    pub fn to_matrix(&self, v: Var) -> Matrix {
        self.value(v).to_matrix()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "not a scalar node");
        m.get(0, 0)
    }

    fn push(&mut self, value: Value<'p>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(Value::Owned(m), Op::Leaf, false)
    }

    pub fn constant_view(&mut self, m: MatRef<'p>) -> Var {
        self.push(Value::View(m), Op::Leaf, false)
    }

    /// Differentiable leaf borrowing a parameter view.
    pub fn param(&mut self, m: MatRef<'p>) -> Var {
        self.push(Value::View(m), Op::Leaf, true)
    }

    pub fn param_owned(&mut self, m: Matrix) -> Var {
        self.push(Value::Owned(m), Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let macs = (va.rows() * va.cols() * vb.cols()) as u64;
        let out = va.matmul(vb);
        self.macs += macs;
        let rg = self.rg(a) || self.rg(b);
        self.push(Value::Owned(out), Op::MatMul(a, b), rg)
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let macs = (va.rows() * va.cols() * vb.rows()) as u64;
        let out = va.matmul_nt(vb);
        self.macs += macs;
        let rg = self.rg(a) || self.rg(b);
        self.push(Value::Owned(out), Op::MatMulNt(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(Value::Owned(out), Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(Value::Owned(out), Op::Sub(a, b), rg)
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "elementwise shape mismatch");
        Matrix::from_fn(va.rows(), va.cols(), |i, j| f(va.get(i, j), vb.get(i, j)))
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (va, vr) = (self.value(a), self.value(row));
        assert_eq!(vr.rows(), 1);
        assert_eq!(va.cols(), vr.cols());
        let out = Matrix::from_fn(va.rows(), va.cols(), |i, j| va.get(i, j) + vr.get(0, j));
        let rg = self.rg(a) || self.rg(row);
        self.push(Value::Owned(out), Op::AddRow(a, row), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).to_matrix().map(f64::tanh);
        let rg = self.rg(a);
        self.push(Value::Owned(out), Op::Tanh(a), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).to_matrix().map(|x| x * s);
        let rg = self.rg(a);
        self.push(Value::Owned(out), Op::Scale(a, s), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut out = Matrix::zeros(va.rows(), va.cols());
        for i in 0..va.rows() {
            let row = va.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (j, &x) in row.iter().enumerate() {
                let e = (x - m).exp();
                out.set(i, j, e);
                z += e;
            }
            for j in 0..va.cols() {
                out.set(i, j, out.get(i, j) / z);
            }
        }
        let rg = self.rg(a);
        self.push(Value::Owned(out), Op::SoftmaxRows(a), rg)
    }

    /// Linear state scan over the rows of `inputs`:
    /// `h_t = A h_{t-1} + v_t`, `h_{-1} = 0`. Row `t` of the output is `h_t`.
    pub fn scan(&mut self, transition: Var, inputs: Var) -> Var {
        let (a, v) = (self.value(transition), self.value(inputs));
        let n = a.rows();
        assert_eq!(a.cols(), n, "transition must be square");
        assert_eq!(v.cols(), n, "scan input width must equal state size");
        let steps = v.rows();
        let mut out = Matrix::zeros(steps, n);
        let mut prev = vec![0.0; n];
        for t in 0..steps {
            let vin = v.row(t);
            for i in 0..n {
                let ar = a.row(i);
                let s: f64 = ar.iter().zip(&prev).map(|(x, y)| x * y).sum();
                out.set(t, i, s + vin[i]);
            }
            prev.copy_from_slice(out.row(t));
        }
        self.macs += (steps * n * n) as u64;
        let rg = self.rg(transition) || self.rg(inputs);
        self.push(Value::Owned(out), Op::Scan(transition, inputs), rg)
    }

    pub fn col_slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let va = self.value(a);
        assert!(start + len <= va.cols());
        let out = Matrix::from_fn(va.rows(), len, |i, j| va.get(i, start + j));
        let rg = self.rg(a);
        self.push(Value::Owned(out), Op::ColSlice(a, start), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.rows(), rows);
            for i in 0..rows {
                for j in 0..v.cols() {
                    out.set(i, off + j, v.get(i, j));
                }
            }
            off += v.cols();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Value::Owned(out), Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Per-channel 2D DCT of a `(h * w) x c` token matrix, with each spectral
    /// coefficient multiplied by `mask[u][v]` (used to drop the DC term).
    pub fn dct2_tokens(&mut self, x: Var, h: usize, w: usize, mask: Matrix) -> Var {
        assert_eq!(mask.shape(), (h, w));
        let out = masked_token_spectrum(self.value(x), h, w, &mask);
        let rg = self.rg(x);
        self.push(Value::Owned(out), Op::Dct2Tokens { x, h, w, mask }, rg)
    }

    /// Mean squared difference over all elements, as a `1 x 1` node.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mse shape mismatch");
        let n = (va.rows() * va.cols()) as f64;
        let mut s = 0.0;
        for i in 0..va.rows() {
            for (x, y) in va.row(i).iter().zip(vb.row(i)) {
                s += (x - y) * (x - y);
            }
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(Value::Owned(Matrix::filled(1, 1, s / n)), Op::Mse(a, b), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let n = (va.rows() * va.cols()) as f64;
        let s: f64 = (0..va.rows()).map(|i| va.row(i).iter().sum::<f64>()).sum();
        let rg = self.rg(a);
        self.push(Value::Owned(Matrix::filled(1, 1, s / n)), Op::Mean(a), rg)
    }

    /// Weighted sum of scalar nodes.
    pub fn combine(&mut self, terms: &[(Var, f64)]) -> Var {
        let mut s = 0.0;
        for &(v, w) in terms {
            s += w * self.scalar(v);
        }
        let rg = terms.iter().any(|&(v, _)| self.rg(v));
        self.push(Value::Owned(Matrix::filled(1, 1, s)), Op::Combine(terms.to_vec()), rg)
    }

    /// Binary cross-entropy of a scalar logit against a label in `{0, 1}`.
    pub fn bce_with_logits(&mut self, logit: Var, label: f64) -> Var {
        let z = self.scalar(logit);
        // log(1 + e^z) - y z, computed stably
        let loss = z.max(0.0) - z * label + (-z.abs()).exp().ln_1p();
        let rg = self.rg(logit);
        self.push(Value::Owned(Matrix::filled(1, 1, loss)), Op::BceWithLogits(logit, label), rg)
    }

    /// Scale-invariant log error `mean(d^2) - lambda mean(d)^2` with
    /// `d = ln a - ln b`. Non-positive inputs give a NaN loss.
    pub fn silog(&mut self, a: Var, b: Var, lambda: f64) -> Var {
        let d = self.zip(a, b, |x, y| x.ln() - y.ln());
        let n = d.len() as f64;
        let mean = d.sum() / n;
        let sq = d.data().iter().map(|x| x * x).sum::<f64>() / n;
        let rg = self.rg(a) || self.rg(b);
        self.push(Value::Owned(Matrix::filled(1, 1, sq - lambda * mean * mean)), Op::Silog(a, b, lambda), rg)
    }

    /// Gradients of the scalar `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Gradients {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Matrix>> = vec![None; n];
        assert_eq!(self.value(output).shape(), (1, 1), "backward needs a scalar output");
        grads[output.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(&node.op, idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, op: &Op, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let out = self.nodes[idx].value.as_ref();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    accumulate(grads, *a, g.as_ref().matmul_nt(vb));
                }
                if self.rg(*b) {
                    accumulate(grads, *b, va.matmul_tn(g.as_ref()));
                }
            }
            Op::MatMulNt(a, b) => {
                // out = a b^T: da = g b, db = g^T a
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    accumulate(grads, *a, g.as_ref().matmul(vb));
                }
                if self.rg(*b) {
                    accumulate(grads, *b, g.as_ref().matmul_tn(va));
                }
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.rg(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.rg(*b) {
                    accumulate(grads, *b, g.map(|x| -x));
                }
            }
            Op::AddRow(a, row) => {
                if self.rg(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.rg(*row) {
                    let r = Matrix::from_fn(1, g.cols(), |_, j| (0..g.rows()).map(|i| g.get(i, j)).sum());
                    accumulate(grads, *row, r);
                }
            }
            Op::Tanh(a) => {
                let d = Matrix::from_fn(g.rows(), g.cols(), |i, j| {
                    let y = out.get(i, j);
                    g.get(i, j) * (1.0 - y * y)
                });
                accumulate(grads, *a, d);
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.map(|x| x * s)),
            Op::SoftmaxRows(a) => {
                let mut d = Matrix::zeros(g.rows(), g.cols());
                for i in 0..g.rows() {
                    let dot: f64 = (0..g.cols()).map(|j| g.get(i, j) * out.get(i, j)).sum();
                    for j in 0..g.cols() {
                        d.set(i, j, out.get(i, j) * (g.get(i, j) - dot));
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::Scan(transition, inputs) => {
                let a = self.value(*transition);
                let n = a.rows();
                let steps = out.rows();
                let mut d_inputs = Matrix::zeros(steps, n);
                let mut d_a = Matrix::zeros(n, n);
                let mut carry = vec![0.0; n];
                for t in (0..steps).rev() {
                    let gh: Vec<f64> = (0..n).map(|i| g.get(t, i) + carry[i]).collect();
                    for i in 0..n {
                        d_inputs.set(t, i, gh[i]);
                    }
                    if t > 0 {
                        let prev = out.row(t - 1);
                        for i in 0..n {
                            for j in 0..n {
                                d_a.set(i, j, d_a.get(i, j) + gh[i] * prev[j]);
                            }
                        }
                    }
                    for (j, c) in carry.iter_mut().enumerate() {
                        *c = (0..n).map(|i| a.get(i, j) * gh[i]).sum();
                    }
                }
                if self.rg(*transition) {
                    accumulate(grads, *transition, d_a);
                }
                if self.rg(*inputs) {
                    accumulate(grads, *inputs, d_inputs);
                }
            }
            Op::ColSlice(a, start) => {
                let va = self.value(*a);
                let mut d = Matrix::zeros(va.rows(), va.cols());
                for i in 0..g.rows() {
                    for j in 0..g.cols() {
                        d.set(i, start + j, g.get(i, j));
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    if self.rg(p) {
                        let d = Matrix::from_fn(g.rows(), c, |i, j| g.get(i, off + j));
                        accumulate(grads, p, d);
                    }
                    off += c;
                }
            }
            Op::Dct2Tokens { x, h, w, mask } => {
                let mut gm = g.clone();
                apply_spectrum_mask(&mut gm, mask, *w);
                accumulate(grads, *x, dct2_tokens(gm.as_ref(), *h, *w, true));
            }
            Op::Mse(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let n = (va.rows() * va.cols()) as f64;
                let s = 2.0 * g.get(0, 0) / n;
                let d = Matrix::from_fn(va.rows(), va.cols(), |i, j| s * (va.get(i, j) - vb.get(i, j)));
                if self.rg(*b) {
                    accumulate(grads, *b, d.map(|x| -x));
                }
                if self.rg(*a) {
                    accumulate(grads, *a, d);
                }
            }
            Op::Mean(a) => {
                let va = self.value(*a);
                let n = (va.rows() * va.cols()) as f64;
                accumulate(grads, *a, Matrix::filled(va.rows(), va.cols(), g.get(0, 0) / n));
            }
            Op::Combine(terms) => {
                for &(v, w) in terms {
                    if self.rg(v) {
                        accumulate(grads, v, Matrix::filled(1, 1, w * g.get(0, 0)));
                    }
                }
            }
            Op::BceWithLogits(logit, label) => {
                let z = self.scalar(*logit);
                let p = 1.0 / (1.0 + (-z).exp());
                accumulate(grads, *logit, Matrix::filled(1, 1, g.get(0, 0) * (p - label)));
            }
            Op::Silog(a, b, lambda) => {
                let d = self.zip(*a, *b, |x, y| x.ln() - y.ln());
                let n = d.len() as f64;
                let mean = d.sum() / n;
                let gd = d.map(|x| g.get(0, 0) * 2.0 * (x - lambda * mean) / n);
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    accumulate(grads, *a, Matrix::from_fn(va.rows(), va.cols(), |i, j| gd.get(i, j) / va.get(i, j)));
                }
                if self.rg(*b) {
                    accumulate(grads, *b, Matrix::from_fn(vb.rows(), vb.cols(), |i, j| -gd.get(i, j) / vb.get(i, j)));
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, d: Matrix) {
    match &mut grads[v.0] {
        Some(g) => g.add_assign_scaled(&d, 1.0),
        slot @ None => *slot = Some(d),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric_grad(f: &dyn Fn(&Matrix) -> f64, x: &Matrix) -> Matrix {
        let h = 1e-6;
        Matrix::from_fn(x.rows(), x.cols(), |i, j| {
            let mut p = x.clone();
            p.set(i, j, x.get(i, j) + h);
            let mut m = x.clone();
            m.set(i, j, x.get(i, j) - h);
            (f(&p) - f(&m)) / (2.0 * h)
        })
    }

    fn assert_close(a: &Matrix, b: &Matrix, tol: f64) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())), "{x} vs {y}");
        }
    }

    fn sample(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut s = seed;
        Matrix::from_fn(rows, cols, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
    }

    #[test]
    fn scan_gradient_matches_finite_differences() {
        let a0 = sample(3, 3, 1);
        let v0 = sample(5, 3, 2);
        let f = |a: &Matrix, v: &Matrix| {
            let mut t = Tape::new();
            let av = t.param_owned(a.clone());
            let vv = t.param_owned(v.clone());
            let h = t.scan(av, vv);
            let th = t.tanh(h);
            let l = t.mean(th);
            (t.scalar(l), t.backward(l).get(av).cloned(), t.backward(l).get(vv).cloned())
        };
        let (_, ga, gv) = f(&a0, &v0);
        let na = numeric_grad(&|a| f(a, &v0).0, &a0);
        let nv = numeric_grad(&|v| f(&a0, v).0, &v0);
        assert_close(&ga.unwrap(), &na, 1e-7);
        assert_close(&gv.unwrap(), &nv, 1e-7);
    }

    #[test]
    fn attention_ops_gradient_matches_finite_differences() {
        let q0 = sample(4, 3, 3);
        let k0 = sample(5, 3, 4);
        let f = |q: &Matrix| {
            let mut t = Tape::new();
            let qv = t.param_owned(q.clone());
            let kv = t.constant(k0.clone());
            let s = t.matmul_nt(qv, kv);
            let p = t.softmax_rows(s);
            let o = t.matmul(p, kv);
            let left = t.col_slice(o, 0, 2);
            let right = t.col_slice(o, 2, 1);
            let cat = t.concat_cols(&[right, left]);
            let target = t.constant(Matrix::filled(4, 3, 0.1));
            let l = t.mse(cat, target);
            (t.scalar(l), t.backward(l).get(qv).cloned().unwrap())
        };
        let (_, g) = f(&q0);
        assert_close(&g, &numeric_grad(&|q| f(q).0, &q0), 1e-7);
    }

    #[test]
    fn dct_and_bce_gradients() {
        let x0 = sample(6, 2, 5);
        let mask = crate::distill::dct::spectrum_mask(2, 3, None);
        let f = |x: &Matrix| {
            let mut t = Tape::new();
            let xv = t.param_owned(x.clone());
            let s = t.dct2_tokens(xv, 2, 3, mask.clone());
            let z = t.constant(Matrix::zeros(6, 2));
            let l1 = t.mse(s, z);
            let m = t.mean(xv);
            let l2 = t.bce_with_logits(m, 1.0);
            let l = t.combine(&[(l1, 0.7), (l2, 1.3)]);
            (t.scalar(l), t.backward(l).get(xv).cloned().unwrap())
        };
        let (_, g) = f(&x0);
        assert_close(&g, &numeric_grad(&|x| f(x).0, &x0), 1e-7);
    }

    #[test]
    fn silog_gradient_matches_finite_differences() {
        let p0 = sample(3, 4, 6).map(|x| x + 1.0);
        let t0 = sample(3, 4, 7).map(|x| x + 1.2);
        let f = |p: &Matrix| {
            let mut t = Tape::new();
            let pv = t.param_owned(p.clone());
            let tv = t.constant(t0.clone());
            let l = t.silog(pv, tv, 0.85);
            (t.scalar(l), t.backward(l).get(pv).cloned().unwrap())
        };
        let (v, g) = f(&p0);
        let direct = crate::distill::silog_loss(&p0, &t0, 0.85).unwrap();
        assert!((v - direct).abs() < 1e-14);
        assert_close(&g, &numeric_grad(&|p| f(p).0, &p0), 1e-7);
    }

    #[test]
    fn macs_count_products() {
        let mut t = Tape::inference();
        let a = t.constant(Matrix::zeros(4, 3));
        let b = t.constant(Matrix::zeros(3, 5));
        t.matmul(a, b);
        assert_eq!(t.macs(), 60);
        let s = t.constant(Matrix::zeros(2, 2));
        let v = t.constant(Matrix::zeros(7, 2));
        t.scan(s, v);
        assert_eq!(t.macs(), 60 + 7 * 4);
    }
}
