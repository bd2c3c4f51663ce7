//! Small row-major dense matrices and borrowed strided views.
//!
//! Supernet tensors are stored at their maximal size; subnetworks read the
//! leading `rows x cols` block through a [`MatRef`] whose stride is the
//! parent's column count, so no parameter data is copied.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_ref(&self) -> MatRef<'_> {
        MatRef {
            data: &self.data,
            rows: self.rows,
            cols: self.cols,
            stride: self.cols,
        }
    }

    /// Borrowed view of the leading `rows x cols` block.
    pub fn leading(&self, rows: usize, cols: usize) -> MatRef<'_> {
        assert!(rows <= self.rows && cols <= self.cols, "leading block out of range");
        MatRef {
            data: &self.data,
            rows,
            cols,
            stride: self.cols,
        }
    }

    pub fn leading_mut(&mut self, rows: usize, cols: usize) -> MatMut<'_> {
        assert!(rows <= self.rows && cols <= self.cols, "leading block out of range");
        let stride = self.cols;
        MatMut {
            data: &mut self.data,
            rows,
            cols,
            stride,
        }
    }

    pub fn transpose(&self) -> Matrix {
        self.as_ref().transpose()
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        self.as_ref().matmul(other.as_ref())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add_assign_scaled(&mut self, other: &Matrix, scale: f64) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Borrowed, possibly strided, read-only view.
#[derive(Debug, Clone, Copy)]
pub struct MatRef<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    stride: usize,
}

impl<'a> MatRef<'a> {
    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.stride + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.stride..i * self.stride + self.cols]
    }

    /// Whether this view starts at the same address as `data`.
    pub fn shares_storage_with(&self, data: &[f64]) -> bool {
        std::ptr::eq(self.data.as_ptr(), data.as_ptr())
    }

    pub fn to_matrix(&self) -> Matrix {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for i in 0..self.rows {
            out.extend_from_slice(self.row(i));
        }
        Matrix::from_vec(self.rows, self.cols, out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.rows * self.cols];
        for i in 0..self.rows {
            for (j, &v) in self.row(i).iter().enumerate() {
                out[j * self.rows + i] = v;
            }
        }
        Matrix::from_vec(self.cols, self.rows, out)
    }

    pub fn matmul(&self, other: MatRef<'_>) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension mismatch");
        let mut out = vec![0.0; self.rows * other.cols];
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU features were detected above.
            unsafe { matmul_fma(*self, other, &mut out) };
            return Matrix::from_vec(self.rows, other.cols, out);
        }
        matmul_kernel::<false>(*self, other, &mut out);
        Matrix::from_vec(self.rows, other.cols, out)
    }

    /// `self * other^T`.
    pub fn matmul_nt(&self, other: MatRef<'_>) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_nt inner dimension mismatch");
        self.matmul(other.transpose().as_ref())
    }

    /// `self^T * other`.
    pub fn matmul_tn(&self, other: MatRef<'_>) -> Matrix {
        assert_eq!(self.rows, other.rows, "matmul_tn inner dimension mismatch");
        self.transpose().as_ref().matmul(other)
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn matmul_fma(a: MatRef<'_>, b: MatRef<'_>, out: &mut [f64]) {
    matmul_kernel::<true>(a, b, out)
}

#[inline(always)]
fn madd<const FMA: bool>(acc: f64, x: f64, y: f64) -> f64 {
    if FMA {
        x.mul_add(y, acc)
    } else {
        acc + x * y
    }
}

/// Row-major `out = a * b`, register-blocked over 4 rows and `W` columns.
#[inline(always)]
fn block<const FMA: bool, const W: usize>(a: &[&[f64]; 4], b: MatRef<'_>, j: usize, out: &mut [f64], i: usize) {
    let n = b.cols;
    let mut acc = [[0.0; W]; 4];
    for k in 0..b.rows {
        let bk: &[f64; W] = b.row(k)[j..j + W].try_into().unwrap();
        for (r, acc_r) in acc.iter_mut().enumerate() {
            let ark = a[r][k];
            for c in 0..W {
                acc_r[c] = madd::<FMA>(acc_r[c], ark, bk[c]);
            }
        }
    }
    for (r, acc_r) in acc.iter().enumerate() {
        out[(i + r) * n + j..(i + r) * n + j + W].copy_from_slice(acc_r);
    }
}

#[inline(always)]
fn matmul_kernel<const FMA: bool>(a: MatRef<'_>, b: MatRef<'_>, out: &mut [f64]) {
    let (m, n) = (a.rows, b.cols);
    let dot = |r: usize, j: usize| a.row(r).iter().enumerate().fold(0.0, |s, (k, &x)| madd::<FMA>(s, x, b.get(k, j)));
    let mut i = 0;
    while i + 4 <= m {
        let rows = [a.row(i), a.row(i + 1), a.row(i + 2), a.row(i + 3)];
        let mut j = 0;
        while j + 8 <= n {
            block::<FMA, 8>(&rows, b, j, out, i);
            j += 8;
        }
        if j + 4 <= n {
            block::<FMA, 4>(&rows, b, j, out, i);
            j += 4;
        }
        for r in i..i + 4 {
            for jj in j..n {
                out[r * n + jj] = dot(r, jj);
            }
        }
        i += 4;
    }
    for r in i..m {
        for jj in 0..n {
            out[r * n + jj] = dot(r, jj);
        }
    }
}

/// Borrowed, possibly strided, mutable view. Writes land in the parent tensor.
#[derive(Debug)]
pub struct MatMut<'a> {
    data: &'a mut [f64],
    rows: usize,
    cols: usize,
    stride: usize,
}

impl<'a> MatMut<'a> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.rows && j < self.cols);
        self.data[i * self.stride + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(i < self.rows && j < self.cols);
        self.data[i * self.stride + j] = v;
    }

    /// Adds `scale * delta` to the viewed block.
    pub fn add_scaled(&mut self, delta: &Matrix, scale: f64) {
        assert_eq!((self.rows, self.cols), delta.shape());
        for i in 0..self.rows {
            let dst = &mut self.data[i * self.stride..i * self.stride + self.cols];
            for (d, s) in dst.iter_mut().zip(delta.row(i)) {
                *d += scale * s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leading_view_reads_parent_block() {
        let m = Matrix::from_fn(4, 5, |i, j| (i * 10 + j) as f64);
        let v = m.leading(2, 3);
        assert_eq!(v.to_matrix(), Matrix::from_vec(2, 3, vec![0., 1., 2., 10., 11., 12.]));
        assert!(v.shares_storage_with(m.data()));
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Matrix::from_fn(3, 4, |i, j| (i as f64) - 0.5 * j as f64);
        let b = Matrix::from_fn(4, 2, |i, j| (i * j) as f64 + 1.0);
        let ab = a.matmul(&b);
        assert_eq!(a.as_ref().matmul_nt(b.transpose().as_ref()), ab);
        assert_eq!(a.transpose().as_ref().matmul_tn(b.as_ref()), ab);
    }

    #[test]
    fn mutable_view_writes_through() {
        let mut m = Matrix::zeros(3, 3);
        m.leading_mut(2, 2).add_scaled(&Matrix::filled(2, 2, 1.0), 2.0);
        assert_eq!(m.get(1, 1), 2.0);
        assert_eq!(m.get(2, 2), 0.0);
        assert_eq!(m.get(0, 2), 0.0);
    }
}
