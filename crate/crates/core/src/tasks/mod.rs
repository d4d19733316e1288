//! Task generation: MNIST ingestion, rotation and permutation families,
//! subsampling with sample-size schedules, and planted regression tasks.

mod idx;
mod planted;

pub use idx::{
    bundled_mnist_dir, load_mnist_dir, load_mnist_idx, mnist_from_bytes, parse_images, parse_labels, MnistSplits, RawDataset,
    IMAGE_MAGIC, LABEL_MAGIC,
};
pub use planted::{frobenius_norm, gen_planted, planted_task, spectral_norm, Link, PlantedConfig, PlantedModel, Psi, XDist};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::TaskId;
use crate::nn::{Batch, Matrix, Targets};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification { classes: u32 },
    Regression,
}

/// How a task was generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TaskMeta {
    Base,
    Rotated { degrees: f64 },
    Permuted { perm_seed: u64 },
    Planted { model_seed: u64, task_index: usize, r_frz: usize },
}

#[derive(Debug, Clone)]
pub struct TaskDataset {
    pub task_id: TaskId,
    pub kind: TaskKind,
    pub train: Batch<f32>,
    pub test: Batch<f32>,
    pub meta: TaskMeta,
    /// Fraction of the generator's training split kept by `subsample`.
    pub train_fraction: f64,
}

impl TaskDataset {
    pub fn n_train(&self) -> usize {
        self.train.targets.len()
    }

    pub fn n_test(&self) -> usize {
        self.test.targets.len()
    }
}

fn split_batch(raw: &RawDataset, map: impl Fn(&[f32]) -> Vec<f32>) -> Batch<f32> {
    let n = raw.len();
    let cols = raw.images.cols();
    let mut data = Vec::with_capacity(n * cols);
    for r in 0..n {
        data.extend(map(raw.images.row(r)));
    }
    Batch {
        inputs: Matrix::from_vec(n, cols, data),
        targets: Targets::Classes(raw.labels.clone()),
    }
}

fn classification(raw: &MnistSplits, task_id: TaskId, meta: TaskMeta, map: impl Fn(&[f32]) -> Vec<f32>) -> TaskDataset {
    TaskDataset {
        task_id,
        kind: TaskKind::Classification { classes: 10 },
        train: split_batch(&raw.train, &map),
        test: split_batch(&raw.test, &map),
        meta,
        train_fraction: 1.0,
    }
}

/// Untransformed MNIST as a task.
pub fn base_task(raw: &MnistSplits, task_id: TaskId) -> TaskDataset {
    classification(raw, task_id, TaskMeta::Base, |x| x.to_vec())
}

/// Counterclockwise rotation of a `rows × cols` image about its center by
/// bilinear interpolation; samples falling outside the image read as zero.
pub fn rotate_image(src: &[f32], rows: usize, cols: usize, degrees: f64) -> Vec<f32> {
    let turns = degrees.rem_euclid(360.0);
    if turns == 0.0 {
        return src.to_vec();
    }
    // exact trig on the grid-aligned angles keeps those rotations pure permutations
    let (sin, cos) = match turns {
        90.0 => (1.0, 0.0),
        180.0 => (0.0, -1.0),
        270.0 => (-1.0, 0.0),
        t => t.to_radians().sin_cos(),
    };
    let cy = (rows as f64 - 1.0) / 2.0;
    let cx = (cols as f64 - 1.0) / 2.0;
    let at = |r: i64, c: i64| -> f64 {
        if r < 0 || c < 0 || r >= rows as i64 || c >= cols as i64 {
            0.0
        } else {
            src[r as usize * cols + c as usize] as f64
        }
    };
    let mut out = vec![0.0f32; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let xd = c as f64 - cx;
            let yd = cy - r as f64;
            let xs = xd * cos + yd * sin;
            let ys = -xd * sin + yd * cos;
            let (sr, sc) = (cy - ys, xs + cx);
            let (r0, c0) = (sr.floor(), sc.floor());
            let (fr, fc) = (sr - r0, sc - c0);
            let (r0, c0) = (r0 as i64, c0 as i64);
            let v = (1.0 - fr) * (1.0 - fc) * at(r0, c0)
                + (1.0 - fr) * fc * at(r0, c0 + 1)
                + fr * (1.0 - fc) * at(r0 + 1, c0)
                + fr * fc * at(r0 + 1, c0 + 1);
            out[r * cols + c] = v as f32;
        }
    }
    out
}

/// Every train and test image rotated by `degrees` (in `[0, 360)`).
pub fn rotate_task(raw: &MnistSplits, degrees: f64, task_id: TaskId) -> Result<TaskDataset> {
    if !(0.0..360.0).contains(&degrees) {
        return Err(Error::InvalidConfig(format!("rotation must lie in [0, 360), got {degrees}")));
    }
    let (rows, cols) = (raw.train.rows, raw.train.cols);
    Ok(classification(raw, task_id, TaskMeta::Rotated { degrees }, |x| {
        rotate_image(x, rows, cols, degrees)
    }))
}

/// Seeded Fisher–Yates permutation of `0..n`.
pub fn permutation(n: usize, perm_seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut stream(perm_seed, 0, Purpose::Permutation));
    p
}

/// `out[i] = img[perm[i]]`.
pub fn apply_permutation(img: &[f32], perm: &[usize]) -> Vec<f32> {
    perm.iter().map(|&i| img[i]).collect()
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// One fixed pixel permutation applied to train and test alike.
pub fn permute_task(raw: &MnistSplits, perm_seed: u64, task_id: TaskId) -> TaskDataset {
    let perm = permutation(raw.train.images.cols(), perm_seed);
    classification(raw, task_id, TaskMeta::Permuted { perm_seed }, |x| apply_permutation(x, &perm))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Amount {
    Fraction(f64),
    Count(usize),
}

/// Uniform subsample of the training split without replacement (kept in
/// original order); the test split is untouched.
pub fn subsample(dataset: &TaskDataset, amount: Amount, seed: u64) -> Result<TaskDataset> {
    let n = dataset.n_train();
    let k = match amount {
        Amount::Fraction(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidConfig(format!("subsample fraction must lie in (0, 1], got {f}")));
            }
            ((f * n as f64).round() as usize).clamp(1, n.max(1))
        }
        Amount::Count(k) => k,
    };
    if k > n {
        return Err(Error::NotEnoughSamples {
            requested: k,
            available: n,
        });
    }
    let mut out = dataset.clone();
    if k == n {
        return Ok(out);
    }
    let mut rng = stream(seed, dataset.task_id.into(), Purpose::Subsample);
    let mut idx = rand::seq::index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    out.train = Batch {
        inputs: dataset.train.inputs.gather_rows(&idx),
        targets: dataset.train.targets.gather(&idx),
    };
    out.train_fraction = dataset.train_fraction * k as f64 / n as f64;
    Ok(out)
}

/// Training-set size of task `t` (1-based) out of `total` under the geometric
/// schedule `n0 · ratio^{(t−1)/(total−1)}`.
pub fn sample_schedule(n0: usize, t: usize, total: usize, ratio: f64) -> usize {
    if total <= 1 {
        return n0;
    }
    let e = (t.max(1) - 1) as f64 / (total - 1) as f64;
    (n0 as f64 * ratio.powf(e)).round() as usize
}
