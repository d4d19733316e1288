//! Planted shallow regression model `y = σ(v_tᵀ ψ(W x)) + Z`, `Z ~ U[−a, a]`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{TaskDataset, TaskKind, TaskMeta};
use crate::error::{Error, Result};
use crate::mask::TaskId;
use crate::nn::{Batch, Matrix, Targets};
use crate::rng::{stream, Purpose, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Psi {
    Identity,
    LeakyRelu { slope: f64 },
}

impl Psi {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Psi::Identity => x,
            Psi::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Psi::Identity => 1.0,
            Psi::LeakyRelu { slope } => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Logistic,
    Identity,
}

impl Link {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Link::Logistic => 1.0 / (1.0 + (-z).exp()),
            Link::Identity => z,
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Link::Logistic => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 - s)
            }
            Link::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XDist {
    /// Uniform on the ball of radius `√d`.
    UnitBall,
    /// Standard normal, rescaled onto the radius-`√d` ball when outside it.
    NormalClipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub d: usize,
    pub r: usize,
    pub r_frz: usize,
    pub tasks: usize,
    pub psi: Psi,
    pub link: Link,
    /// Noise half-width `a`.
    pub noise: f64,
    /// Head norm `B`.
    pub head_norm: f64,
    /// Spectral norm of `W*`.
    pub spectral_norm: f64,
    pub x_dist: XDist,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            d: 30,
            r: 6,
            r_frz: 4,
            tasks: 4,
            psi: Psi::Identity,
            link: Link::Logistic,
            noise: 0.3,
            head_norm: 1.0,
            spectral_norm: 1.0,
            x_dist: XDist::UnitBall,
        }
    }
}

impl PlantedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.r == 0 || self.r > self.d || self.r_frz > self.r || self.tasks == 0 {
            return Err(Error::InvalidConfig(format!(
                "planted model needs r_frz <= r <= d and T >= 1 (d={}, r={}, r_frz={}, T={})",
                self.d, self.r, self.r_frz, self.tasks
            )));
        }
        if !(self.noise >= 0.0) || !(self.head_norm > 0.0) || !(self.spectral_norm > 0.0) {
            return Err(Error::InvalidConfig("noise must be >= 0 and norms positive".into()));
        }
        Ok(())
    }
}

/// Ground truth of a planted family. `w_star` is `r × d`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedModel {
    pub config: PlantedConfig,
    pub w_star: Vec<f64>,
    pub v_star: Vec<Vec<f64>>,
    pub seed: u64,
}

/// Largest singular value of a `rows × cols` row-major matrix.
pub fn spectral_norm(w: &[f64], rows: usize, cols: usize) -> f64 {
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    // power iteration on W Wᵀ (rows × rows)
    let mut g = vec![0.0; rows * rows];
    for i in 0..rows {
        for j in 0..rows {
            g[i * rows + j] = (0..cols).map(|k| w[i * cols + k] * w[j * cols + k]).sum();
        }
    }
    let mut u = vec![1.0 / (rows as f64).sqrt(); rows];
    let mut lambda = 0.0;
    for _ in 0..1000 {
        let next: Vec<f64> = (0..rows).map(|i| (0..rows).map(|j| g[i * rows + j] * u[j]).sum()).collect();
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let prev = lambda;
        lambda = norm;
        u = next.into_iter().map(|x| x / norm).collect();
        if (lambda - prev).abs() <= 1e-14 * lambda {
            break;
        }
    }
    lambda.sqrt()
}

pub fn frobenius_norm(w: &[f64]) -> f64 {
    w.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn gaussian_vec(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

impl PlantedModel {
    /// `W*`: Gaussian, rescaled to the configured spectral norm. Heads: uniform
    /// on the radius-`B` sphere.
    pub fn sample(config: PlantedConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, 0, Purpose::Planted);
        let mut w = gaussian_vec(&mut rng, config.r * config.d);
        let s = spectral_norm(&w, config.r, config.d);
        w.iter_mut().for_each(|x| *x *= config.spectral_norm / s);
        let v_star = (0..config.tasks)
            .map(|_| {
                let g = gaussian_vec(&mut rng, config.r);
                let n = frobenius_norm(&g);
                g.into_iter().map(|x| x * config.head_norm / n).collect()
            })
            .collect();
        Ok(Self {
            config,
            w_star: w,
            v_star,
            seed,
        })
    }

    /// First `r_frz` rows of `W*`, remaining rows zero.
    pub fn w_frz(&self) -> Vec<f64> {
        let (r_frz, d) = (self.config.r_frz, self.config.d);
        let mut w = self.w_star.clone();
        w[r_frz * d..].iter_mut().for_each(|x| *x = 0.0);
        w
    }

    /// `E[Z²] = a²/3`.
    pub fn optimal_risk(&self) -> f64 {
        self.config.noise * self.config.noise / 3.0
    }

    /// `σ(vᵀ ψ(W x))` for an `r × d` matrix `w`.
    pub fn predict_with(&self, w: &[f64], v: &[f64], x: &[f64]) -> f64 {
        let d = self.config.d;
        let z: f64 = (0..self.config.r)
            .map(|i| {
                let pre: f64 = w[i * d..(i + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum();
                v[i] * self.config.psi.apply(pre)
            })
            .sum();
        self.config.link.apply(z)
    }

    /// Noise-free target of task `t`.
    pub fn truth(&self, t: usize, x: &[f64]) -> f64 {
        self.predict_with(&self.w_star, &self.v_star[t], x)
    }

    pub fn draw_x(&self, rng: &mut StreamRng) -> Vec<f64> {
        let d = self.config.d;
        let radius = (d as f64).sqrt();
        let mut x = gaussian_vec(rng, d);
        let norm = frobenius_norm(&x);
        match self.config.x_dist {
            XDist::UnitBall => {
                let u: f64 = rng.gen();
                let scale = radius * u.powf(1.0 / d as f64) / norm;
                x.iter_mut().for_each(|v| *v *= scale);
            }
            XDist::NormalClipped => {
                if norm > radius {
                    x.iter_mut().for_each(|v| *v *= radius / norm);
                }
            }
        }
        x
    }

    pub fn draw_noise(&self, rng: &mut StreamRng) -> f64 {
        let a = self.config.noise;
        if a == 0.0 {
            0.0
        } else {
            rng.gen_range(-a..=a)
        }
    }

    /// `n` labeled samples of task `t`: (row-major `n × d` inputs, labels).
    pub fn draw(&self, t: usize, n: usize, rng: &mut StreamRng) -> (Vec<f64>, Vec<f64>) {
        let mut xs = Vec::with_capacity(n * self.config.d);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let x = self.draw_x(rng);
            ys.push(self.truth(t, &x) + self.draw_noise(rng));
            xs.extend(x);
        }
        (xs, ys)
    }

    /// `E[xxᵀ] = c·I` for the configured input law.
    pub fn second_moment_scale(&self) -> Option<f64> {
        let d = self.config.d as f64;
        match self.config.x_dist {
            XDist::UnitBall => Some(d / (d + 2.0)),
            XDist::NormalClipped => None,
        }
    }
}

/// Train and test datasets of task `t` (0-based) of a planted model; task id `t + 1`.
pub fn planted_task(model: &PlantedModel, t: usize, n_train: usize, n_test: usize, seed: u64) -> TaskDataset {
    let d = model.config.d;
    let mut rng = stream(seed, t as u64, Purpose::PlantedSamples);
    let (xtr, ytr) = model.draw(t, n_train, &mut rng);
    let (xte, yte) = model.draw(t, n_test, &mut rng);
    let batch = |x: Vec<f64>, y: Vec<f64>, n: usize| Batch {
        inputs: Matrix::from_vec(n, d, x.into_iter().map(|v| v as f32).collect()),
        targets: Targets::Values(y.into_iter().map(|v| v as f32).collect()),
    };
    TaskDataset {
        task_id: t as TaskId + 1,
        kind: TaskKind::Regression,
        train: batch(xtr, ytr, n_train),
        test: batch(xte, yte, n_test),
        meta: TaskMeta::Planted {
            model_seed: model.seed,
            task_index: t,
            r_frz: model.config.r_frz,
        },
        train_fraction: 1.0,
    }
}

/// Train and test datasets for every task of a planted model.
pub fn gen_planted(model: &PlantedModel, n_train: usize, n_test: usize, seed: u64) -> Vec<TaskDataset> {
    (0..model.config.tasks)
        .map(|t| planted_task(model, t, n_train, n_test, seed))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_norm_of_diagonal() {
        let w = [3.0, 0.0, 0.0, 0.0, -5.0, 0.0];
        assert!((spectral_norm(&w, 2, 3) - 5.0).abs() < 1e-9);
    }

    #[test]
    fn model_respects_norms() {
        let m = PlantedModel::sample(PlantedConfig::default(), 4).unwrap();
        assert!((spectral_norm(&m.w_star, 6, 30) - 1.0).abs() < 1e-9);
        for v in &m.v_star {
            assert!((frobenius_norm(v) - 1.0).abs() < 1e-12);
        }
        let f = m.w_frz();
        assert_eq!(&f[..4 * 30], &m.w_star[..4 * 30]);
        assert!(f[4 * 30..].iter().all(|&x| x == 0.0));
        assert_eq!(m, PlantedModel::sample(PlantedConfig::default(), 4).unwrap());
    }

    #[test]
    fn optimal_risk_is_noise_second_moment() {
        let m = PlantedModel::sample(PlantedConfig::default(), 1).unwrap();
        assert!((m.optimal_risk() - 0.03).abs() < 1e-15);
    }

    #[test]
    fn noiseless_truth_has_zero_risk_and_labels_in_range() {
        let cfg = PlantedConfig {
            noise: 0.0,
            ..PlantedConfig::default()
        };
        let m = PlantedModel::sample(cfg, 2).unwrap();
        let mut rng = stream(9, 0, Purpose::PlantedSamples);
        let (xs, ys) = m.draw(1, 50, &mut rng);
        for (x, y) in xs.chunks(30).zip(&ys) {
            assert_eq!(m.truth(1, x), *y);
        }
        let noisy = PlantedModel::sample(PlantedConfig::default(), 2).unwrap();
        let (xs, ys) = noisy.draw(0, 500, &mut rng);
        assert!(ys.iter().all(|&y| (-0.3..=1.3).contains(&y)));
        assert!(xs.chunks(30).all(|x| frobenius_norm(x) <= 30f64.sqrt() + 1e-12));
    }

    #[test]
    fn full_frozen_rows_leave_nothing_to_learn() {
        let mut cfg = PlantedConfig::default();
        cfg.r_frz = cfg.r;
        let m = PlantedModel::sample(cfg, 3).unwrap();
        assert_eq!(m.w_frz(), m.w_star);
    }

    #[test]
    fn generated_datasets() {
        let m = PlantedModel::sample(PlantedConfig::default(), 5).unwrap();
        let ds = gen_planted(&m, 40, 10, 8);
        assert_eq!(ds.len(), 4);
        assert_eq!(ds[2].n_train(), 40);
        assert_eq!(ds[2].test.inputs.shape(), (10, 30));
        assert_eq!(ds[0].train.inputs, gen_planted(&m, 40, 10, 8)[0].train.inputs);
    }
}
