//! Orthonormal 2D type-II DCT and its inverse.
//!
//! The transform is separable: `Y = D_h X D_w^T` where `D_n` is the
//! orthonormal DCT-II basis. Because `D_n` is orthogonal the inverse is
//! `X = D_h^T Y D_w`.

use std::f64::consts::PI;

use crate::tensor::{MatRef, Matrix};

/// Orthonormal DCT-II basis: `D[k][n] = s_k cos(pi (2n + 1) k / 2N)`.
pub fn dct_basis(n: usize) -> Matrix {
    let nf = n as f64;
    Matrix::from_fn(n, n, |k, i| {
        let scale = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        scale * (PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * nf)).cos()
    })
}

pub fn dct2(x: &Matrix) -> Matrix {
    let dh = dct_basis(x.rows());
    let dw = dct_basis(x.cols());
    dh.matmul(x).as_ref().matmul_nt(dw.as_ref())
}

pub fn idct2(y: &Matrix) -> Matrix {
    let dh = dct_basis(y.rows());
    let dw = dct_basis(y.cols());
    dh.as_ref().matmul_tn(y.as_ref()).matmul(&dw)
}

/// Zeroes the DC coefficient `(0, 0)`.
pub fn suppress_dc(spectrum: &Matrix) -> Matrix {
    let mut out = spectrum.clone();
    if !out.is_empty() {
        out.set(0, 0, 0.0);
    }
    out
}

/// Per-coefficient weights applied to a spectrum before the frequency loss:
/// the DC term is always dropped, and with `high_pass_radius = Some(r)` every
/// coefficient with `sqrt(u^2 + v^2) < r` is dropped as well.
pub fn spectrum_mask(h: usize, w: usize, high_pass_radius: Option<f64>) -> Matrix {
    Matrix::from_fn(h, w, |u, v| {
        if u == 0 && v == 0 {
            return 0.0;
        }
        match high_pass_radius {
            Some(r) if ((u * u + v * v) as f64).sqrt() < r => 0.0,
            _ => 1.0,
        }
    })
}

/// Applies the 2D DCT (or its inverse) independently to every channel of a
/// token matrix laid out as `(h * w) x channels`, token index `i * w + j`.
pub(crate) fn dct2_tokens(x: MatRef<'_>, h: usize, w: usize, inverse: bool) -> Matrix {
    assert_eq!(x.rows(), h * w, "token count does not match spatial shape");
    let c = x.cols();
    let dh = dct_basis(h);
    let dw = dct_basis(w);
    // coefficient (k, n) of the 1D transform to apply
    let coef = |d: &Matrix, k: usize, n: usize| if inverse { d.get(n, k) } else { d.get(k, n) };

    // along w
    let mut tmp = Matrix::zeros(h * w, c);
    for i in 0..h {
        for u in 0..w {
            let dst = i * w + u;
            for j in 0..w {
                let a = coef(&dw, u, j);
                let src = x.row(i * w + j);
                let out = &mut tmp.data_mut()[dst * c..(dst + 1) * c];
                for (o, s) in out.iter_mut().zip(src) {
                    *o += a * s;
                }
            }
        }
    }
    // along h
    let mut out = Matrix::zeros(h * w, c);
    for k in 0..h {
        for i in 0..h {
            let a = coef(&dh, k, i);
            for u in 0..w {
                let src_start = (i * w + u) * c;
                let dst_start = (k * w + u) * c;
                for ch in 0..c {
                    let s = tmp.data()[src_start + ch];
                    out.data_mut()[dst_start + ch] += a * s;
                }
            }
        }
    }
    out
}

/// Multiplies every channel of token `t` by `mask[t / w][t % w]`.
pub(crate) fn apply_spectrum_mask(spec: &mut Matrix, mask: &Matrix, w: usize) {
    let c = spec.cols();
    for t in 0..spec.rows() {
        let m = mask.get(t / w, t % w);
        if m != 1.0 {
            for v in &mut spec.data_mut()[t * c..(t + 1) * c] {
                *v *= m;
            }
        }
    }
}

/// Per-channel spectrum of a token matrix with `mask` applied.
pub(crate) fn masked_token_spectrum(x: MatRef<'_>, h: usize, w: usize, mask: &Matrix) -> Matrix {
    let mut out = dct2_tokens(x, h, w, false);
    apply_spectrum_mask(&mut out, mask, w);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_matrix_is_dc_only() {
        let x = Matrix::filled(4, 4, 2.5);
        let y = dct2(&x);
        assert!((y.get(0, 0) - 10.0).abs() < 1e-12);
        for i in 0..4 {
            for j in 0..4 {
                if (i, j) != (0, 0) {
                    assert!(y.get(i, j).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn basis_is_orthonormal() {
        for n in 1..9 {
            let d = dct_basis(n);
            let g = d.matmul(&d.transpose());
            for i in 0..n {
                for j in 0..n {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((g.get(i, j) - e).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn suppress_dc_only_touches_origin() {
        let s = Matrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64 + 1.0);
        let out = suppress_dc(&s);
        assert_eq!(out.get(0, 0), 0.0);
        for k in 1..9 {
            assert_eq!(out.data()[k], s.data()[k]);
        }
        let zero_dc = suppress_dc(&out);
        assert_eq!(zero_dc, out);
    }

    #[test]
    fn token_dct_matches_per_channel_dct2() {
        let (h, w, c) = (3, 5, 2);
        let x = Matrix::from_fn(h * w, c, |t, ch| ((t * 7 + ch * 3) % 11) as f64 - 4.0);
        let y = dct2_tokens(x.as_ref(), h, w, false);
        for ch in 0..c {
            let map = Matrix::from_fn(h, w, |i, j| x.get(i * w + j, ch));
            let spec = dct2(&map);
            for i in 0..h {
                for j in 0..w {
                    assert!((spec.get(i, j) - y.get(i * w + j, ch)).abs() < 1e-12);
                }
            }
        }
        let back = dct2_tokens(y.as_ref(), h, w, true);
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn high_pass_mask_drops_low_band() {
        let m = spectrum_mask(4, 4, Some(1.5));
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.get(0, 2), 1.0);
        assert_eq!(spectrum_mask(4, 4, None).sum(), 15.0);
    }
}
