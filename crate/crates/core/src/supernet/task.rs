use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distill::{patchify, TeacherModel, TokenGrid};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Shape and size of the synthetic dense-regression task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub image: (usize, usize),
    /// Student patch size.
    pub patch: usize,
    pub teacher_patch: usize,
    pub teacher_width: usize,
    pub n_train: usize,
    pub n_val: usize,
    /// Standard deviation of the noise added to ground-truth targets.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            image: (8, 8),
            patch: 2,
            teacher_patch: 2,
            teacher_width: 16,
            n_train: 512,
            n_val: 64,
            label_noise: 0.02,
            seed: 0,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image;
        for (name, p) in [("patch", self.patch), ("teacher_patch", self.teacher_patch)] {
            if p == 0 || h % p != 0 || w % p != 0 {
                return Err(Error::InvalidConfig(format!("task.{name} = {p} does not tile {h}x{w}")));
            }
        }
        if self.n_train == 0 || self.n_val == 0 || self.teacher_width == 0 {
            return Err(Error::InvalidConfig("task sizes must be positive".into()));
        }
        if !(self.label_noise >= 0.0 && self.label_noise.is_finite()) {
            return Err(Error::InvalidConfig("task.label_noise must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn teacher_grid(&self) -> (usize, usize) {
        (self.image.0 / self.teacher_patch, self.image.1 / self.teacher_patch)
    }
}

/// One input with everything a training step needs, precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Matrix,
    /// Input patches in student layout (`tokens x patch^2`).
    pub input: Matrix,
    /// Noisy ground truth in student patch layout.
    pub target: Matrix,
    pub teacher_tokens: TokenGrid,
    /// Teacher prediction in student patch layout.
    pub teacher_pred: Matrix,
    /// Pretraining label: `1` when the teacher's mean prediction is positive.
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicroTask {
    pub spec: TaskSpec,
    pub teacher: TeacherModel,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

impl MicroTask {
    /// Ground truth is the frozen teacher's output plus Gaussian noise, so
    /// the teacher's predictions are denoised targets.
    pub fn generate(spec: &TaskSpec) -> Result<Self> {
        spec.validate()?;
        let teacher = TeacherModel::new(spec.image, spec.teacher_patch, spec.teacher_width, spec.seed ^ 0x7EAC_4E55)?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (h, w) = spec.image;
        let mut make = |n: usize| -> Result<Vec<Sample>> {
            (0..n)
                .map(|_| {
                    let image = Matrix::from_fn(h, w, |_, _| StandardNormal.sample(&mut rng));
                    let out = teacher.infer(&image)?;
                    let noisy = Matrix::from_fn(h, w, |i, j| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        out.prediction.get(i, j) + spec.label_noise * e
                    });
                    Ok(Sample {
                        input: patchify(&image, spec.patch)?,
                        target: patchify(&noisy, spec.patch)?,
                        teacher_pred: patchify(&out.prediction, spec.patch)?,
                        label: if out.prediction.mean() > 0.0 { 1.0 } else { 0.0 },
                        teacher_tokens: out.tokens,
                        image,
                    })
                })
                .collect()
        };
        let train = make(spec.n_train)?;
        let val = make(spec.n_val)?;
        Ok(Self {
            spec: spec.clone(),
            teacher,
            train,
            val,
        })
    }
}
