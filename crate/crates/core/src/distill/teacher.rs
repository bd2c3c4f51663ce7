use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::TokenGrid;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Splits an `H x W` image into non-overlapping `p x p` patches, one row per
/// patch (row-major patch order, row-major pixels inside a patch).
pub fn patchify(image: &Matrix, p: usize) -> Result<Matrix> {
    let (h, w) = image.shape();
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::Shape(format!("{h}x{w} image is not divisible into {p}x{p} patches")));
    }
    let gw = w / p;
    Ok(Matrix::from_fn((h / p) * gw, p * p, |t, k| {
        let (ti, tj) = (t / gw, t % gw);
        image.get(ti * p + k / p, tj * p + k % p)
    }))
}

/// Inverse of [`patchify`].
pub fn unpatchify(patches: &Matrix, p: usize, h: usize, w: usize) -> Result<Matrix> {
    if p == 0 || h % p != 0 || w % p != 0 || patches.shape() != ((h / p) * (w / p), p * p) {
        return Err(Error::Shape(format!(
            "{:?} patches do not tile a {h}x{w} image with patch {p}",
            patches.shape()
        )));
    }
    let gw = w / p;
    Ok(Matrix::from_fn(h, w, |i, j| patches.get((i / p) * gw + j / p, (i % p) * p + j % p)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherOutput {
    pub tokens: TokenGrid,
    /// Full-resolution prediction map.
    pub prediction: Matrix,
}

/// Frozen synthetic teacher.
///
/// Patches are embedded, mixed across the token grid by a fixed Gaussian
/// smoothing operator and passed through two `tanh` layers; the second layer's
/// activations are the teacher tokens and a linear read-out produces the
/// prediction patches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherModel {
    pub image_shape: (usize, usize),
    pub patch: usize,
    pub width: usize,
    w_in: Matrix,
    w_mid: Matrix,
    w_out: Matrix,
    smoothing: Matrix,
}

impl TeacherModel {
    pub fn new(image_shape: (usize, usize), patch: usize, width: usize, seed: u64) -> Result<Self> {
        let (h, w) = image_shape;
        if patch == 0 || width == 0 || h % patch != 0 || w % patch != 0 {
            return Err(Error::InvalidConfig(format!(
                "teacher patch {patch} must tile the {h}x{w} input and width must be positive"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pp = patch * patch;
        let mut gaussian = |rows: usize, cols: usize, gain: f64| {
            let n = Normal::new(0.0, gain / (rows as f64).sqrt()).unwrap();
            Matrix::from_fn(rows, cols, |_, _| n.sample(&mut rng))
        };
        let w_in = gaussian(pp, width, 1.5);
        let w_mid = gaussian(width, width, 1.5);
        let w_out = gaussian(width, pp, 1.0);
        let (gh, gw) = (h / patch, w / patch);
        let smoothing = Matrix::from_fn(gh * gw, gh * gw, |a, b| {
            let di = (a / gw) as f64 - (b / gw) as f64;
            let dj = (a % gw) as f64 - (b % gw) as f64;
            (-(di * di + dj * dj) / 2.0).exp()
        });
        let smoothing = row_normalized(smoothing);
        Ok(Self {
            image_shape,
            patch,
            width,
            w_in,
            w_mid,
            w_out,
            smoothing,
        })
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.image_shape.0 / self.patch, self.image_shape.1 / self.patch)
    }

    pub fn infer(&self, image: &Matrix) -> Result<TeacherOutput> {
        if image.shape() != self.image_shape {
            return Err(Error::Shape(format!(
                "teacher expects {:?} input, got {:?}",
                self.image_shape,
                image.shape()
            )));
        }
        let x = patchify(image, self.patch)?;
        let h1 = self.smoothing.matmul(&x).matmul(&self.w_in).map(f64::tanh);
        let h2 = self.smoothing.matmul(&h1).matmul(&self.w_mid).map(f64::tanh);
        let pred = h2.matmul(&self.w_out);
        let (gh, gw) = self.grid();
        Ok(TeacherOutput {
            prediction: unpatchify(&pred, self.patch, self.image_shape.0, self.image_shape.1)?,
            tokens: TokenGrid::new(h2, gh, gw)?,
        })
    }
}

fn row_normalized(mut m: Matrix) -> Matrix {
    for i in 0..m.rows() {
        let s: f64 = m.row(i).iter().sum();
        for j in 0..m.cols() {
            m.set(i, j, m.get(i, j) / s);
        }
    }
    m
}
