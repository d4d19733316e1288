//! Monte-Carlo risk estimators, representation mismatch, constrained ERM and
//! scaling-exponent fits on planted shallow models.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::tasks::frobenius_norm;
use crate::tasks::PlantedModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub value: f64,
    pub n_monte_carlo: usize,
    pub std_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MismatchEstimate {
    pub mm: f64,
    /// Best risk found on top of the frozen rows.
    pub l_frz: RiskEstimate,
    /// Optimal risk `E[Z²]`.
    pub l_star: f64,
    /// Training risk of the ERM solution.
    pub train_risk: f64,
}

fn mean_and_se(values: impl Iterator<Item = f64>) -> (f64, f64, usize) {
    // Welford
    let (mut n, mut mean, mut m2) = (0usize, 0.0f64, 0.0f64);
    for v in values {
        n += 1;
        let delta = v - mean;
        mean += delta / n as f64;
        m2 += delta * (v - mean);
    }
    let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
    (mean, (var / n.max(1) as f64).sqrt(), n)
}

/// Monte-Carlo squared loss of `predictor` on fresh samples of task `task`.
pub fn estimate_population_risk(
    predictor: impl Fn(&[f64]) -> f64,
    planted: &PlantedModel,
    task: usize,
    n_mc: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    if n_mc < 100 {
        return Err(Error::InvalidConfig(format!("need at least 100 Monte-Carlo samples, got {n_mc}")));
    }
    let mut rng = stream(seed, task as u64, Purpose::MonteCarlo);
    let (value, std_error, n) = mean_and_se((0..n_mc).map(|_| {
        let x = planted.draw_x(&mut rng);
        let y = planted.truth(task, &x) + planted.draw_noise(&mut rng);
        let e = y - predictor(&x);
        e * e
    }));
    Ok(RiskEstimate {
        value,
        n_monte_carlo: n,
        std_error,
    })
}

/// Heads and representation of a planted-family fit. `w` is `r × d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShallowFit {
    pub w: Vec<f64>,
    pub v: Vec<Vec<f64>>,
    /// Rows `trainable_from..r` of `w` were learned; the rest are frozen.
    pub trainable_from: usize,
    pub iterations: usize,
    pub train_risk: f64,
}

impl ShallowFit {
    pub fn predict(&self, planted: &PlantedModel, task: usize, x: &[f64]) -> f64 {
        planted.predict_with(&self.w, &self.v[task], x)
    }

    /// Task-averaged `E_x[(f̂_t − f*_t)²]` by Monte Carlo.
    pub fn excess_risk(&self, planted: &PlantedModel, n_mc: usize, seed: u64) -> RiskEstimate {
        let tasks = planted.config.tasks;
        let mut per_task = Vec::with_capacity(tasks);
        for t in 0..tasks {
            let mut rng = stream(seed, t as u64, Purpose::MonteCarlo);
            per_task.push(mean_and_se((0..n_mc).map(|_| {
                let x = planted.draw_x(&mut rng);
                let e = self.predict(planted, t, &x) - planted.truth(t, &x);
                e * e
            })));
        }
        let value = per_task.iter().map(|p| p.0).sum::<f64>() / tasks as f64;
        let se = per_task.iter().map(|p| p.1 * p.1).sum::<f64>().sqrt() / tasks as f64;
        RiskEstimate {
            value,
            n_monte_carlo: n_mc * tasks,
            std_error: se,
        }
    }

    /// Task-averaged population risk (squared loss on fresh labeled samples).
    pub fn population_risk(&self, planted: &PlantedModel, n_mc: usize, seed: u64) -> Result<RiskEstimate> {
        let tasks = planted.config.tasks;
        let mut parts = Vec::with_capacity(tasks);
        for t in 0..tasks {
            parts.push(estimate_population_risk(|x| self.predict(planted, t, x), planted, t, n_mc, seed)?);
        }
        Ok(RiskEstimate {
            value: parts.iter().map(|p| p.value).sum::<f64>() / tasks as f64,
            n_monte_carlo: n_mc * tasks,
            std_error: parts.iter().map(|p| p.std_error * p.std_error).sum::<f64>().sqrt() / tasks as f64,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErmConfig {
    pub max_iter: usize,
    /// Stop when the gradient mapping norm falls below this.
    pub tol: f64,
    /// Initial scale of the random starting point.
    pub init_scale: f64,
}

impl Default for ErmConfig {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            tol: 1e-7,
            init_scale: 0.3,
        }
    }
}

/// Training data of every task: row-major inputs and labels.
pub struct MultiTaskData {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

impl MultiTaskData {
    pub fn draw(planted: &PlantedModel, n: usize, seed: u64) -> Self {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for t in 0..planted.config.tasks {
            let mut rng = stream(seed, t as u64, Purpose::PlantedSamples);
            let (xs, ys) = planted.draw(t, n, &mut rng);
            x.push(xs);
            y.push(ys);
        }
        Self { x, y }
    }
}

struct Problem<'a> {
    planted: &'a PlantedModel,
    data: &'a MultiTaskData,
    frozen: &'a [f64],
    from: usize,
    v_radius: f64,
    w_radius: f64,
    /// Pre-activations of the frozen rows, `n × from` per task.
    frozen_h: Vec<Vec<f64>>,
}

/// Flat parameter vector: `T·r` head entries then `(r − from)·d` new rows.
impl Problem<'_> {
    fn split<'b>(&self, theta: &'b [f64]) -> (&'b [f64], &'b [f64]) {
        theta.split_at(self.planted.config.tasks * self.planted.config.r)
    }

    fn full_w(&self, new_rows: &[f64]) -> Vec<f64> {
        let d = self.planted.config.d;
        let mut w = self.frozen.to_vec();
        w[self.from * d..].copy_from_slice(new_rows);
        w
    }

    fn project(&self, theta: &mut [f64]) {
        let r = self.planted.config.r;
        let (heads, rows) = theta.split_at_mut(self.planted.config.tasks * r);
        for v in heads.chunks_mut(r) {
            let n = frobenius_norm(v);
            if n > self.v_radius {
                v.iter_mut().for_each(|x| *x *= self.v_radius / n);
            }
        }
        let n = frobenius_norm(rows);
        if n > self.w_radius {
            rows.iter_mut().for_each(|x| *x *= self.w_radius / n);
        }
    }

    /// Task-averaged empirical risk and, when `grad` is given, its gradient.
    fn eval(&self, theta: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let cfg = &self.planted.config;
        let (r, d, tasks) = (cfg.r, cfg.d, cfg.tasks);
        let (heads, rows) = self.split(theta);
        let w = self.full_w(rows);
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
        let mut total = 0.0;
        let mut h = vec![0.0; r];
        for t in 0..tasks {
            let v = &heads[t * r..(t + 1) * r];
            let xs = &self.data.x[t];
            let ys = &self.data.y[t];
            let n = ys.len();
            let scale = 1.0 / (n as f64 * tasks as f64);
            for (i, &y) in ys.iter().enumerate() {
                let x = &xs[i * d..(i + 1) * d];
                h[..self.from].copy_from_slice(&self.frozen_h[t][i * self.from..(i + 1) * self.from]);
                for k in self.from..r {
                    h[k] = w[k * d..(k + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum();
                }
                let z: f64 = (0..r).map(|k| v[k] * cfg.psi.apply(h[k])).sum();
                let res = cfg.link.apply(z) - y;
                total += res * res * scale;
                if let Some(g) = grad.as_deref_mut() {
                    let dz = 2.0 * res * cfg.link.derivative(z) * scale;
                    let (gh, gw) = g.split_at_mut(tasks * r);
                    for k in 0..r {
                        gh[t * r + k] += dz * cfg.psi.apply(h[k]);
                    }
                    for k in self.from..r {
                        let c = dz * v[k] * cfg.psi.derivative(h[k]);
                        let row = &mut gw[(k - self.from) * d..(k - self.from + 1) * d];
                        for (a, b) in row.iter_mut().zip(x) {
                            *a += c * b;
                        }
                    }
                }
            }
        }
        total
    }
}

/// Norm-constrained least squares over the heads and the rows of `w` from
/// `trainable_from` on, with the other rows fixed to `frozen`.
///
/// Accelerated projected gradient with backtracking and restarts. Heads are
/// kept in the radius-`B` ball and the learned rows in a Frobenius ball of
/// radius `max(B̄, ‖W*‖_F)` so the ground truth stays feasible.
pub fn fit_shallow(
    planted: &PlantedModel,
    data: &MultiTaskData,
    frozen: &[f64],
    trainable_from: usize,
    erm: &ErmConfig,
    seed: u64,
) -> Result<ShallowFit> {
    let cfg = &planted.config;
    let (r, d, tasks) = (cfg.r, cfg.d, cfg.tasks);
    if frozen.len() != r * d || trainable_from > r {
        return Err(Error::InvalidConfig("frozen matrix or trainable rows do not match the model".into()));
    }
    let problem = Problem {
        planted,
        data,
        frozen,
        from: trainable_from,
        v_radius: cfg.head_norm,
        w_radius: cfg.spectral_norm.max(frobenius_norm(&planted.w_star)),
        frozen_h: data
            .x
            .iter()
            .map(|xs| {
                xs.chunks(d)
                    .flat_map(|x| (0..trainable_from).map(move |k| frozen[k * d..(k + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()))
                    .collect()
            })
            .collect(),
    };
    let dim = tasks * r + (r - trainable_from) * d;
    let mut rng = stream(seed, 0, Purpose::Erm);
    let mut theta: Vec<f64> = (0..dim)
        .map(|i| {
            let fan = if i < tasks * r { r } else { d };
            erm.init_scale * rng.gen_range(-1.0..1.0) / (fan as f64).sqrt()
        })
        .collect();
    problem.project(&mut theta);

    let mut grad = vec![0.0; dim];
    let mut y = theta.clone();
    let mut f_theta = problem.eval(&theta, None);
    let mut step = 1.0;
    let mut momentum = 1.0f64;
    let mut iterations = 0;
    let mut cand = vec![0.0; dim];
    while iterations < erm.max_iter {
        iterations += 1;
        let f_y = problem.eval(&y, Some(&mut grad));
        if !f_y.is_finite() {
            return Err(Error::Diverged(format!("empirical risk became {f_y}")));
        }
        // backtracking on the quadratic upper bound at y
        let (f_cand, moved_y) = loop {
            for i in 0..dim {
                cand[i] = y[i] - step * grad[i];
            }
            problem.project(&mut cand);
            let mut lin = 0.0;
            let mut sq = 0.0;
            for i in 0..dim {
                let dlt = cand[i] - y[i];
                lin += grad[i] * dlt;
                sq += dlt * dlt;
            }
            let f_c = problem.eval(&cand, None);
            if f_c <= f_y + lin + sq / (2.0 * step) + 1e-15 || step < 1e-12 {
                break (f_c, sq.sqrt());
            }
            step *= 0.5;
        };
        if f_cand > f_theta {
            // restart the momentum from the last accepted point
            momentum = 1.0;
            y.copy_from_slice(&theta);
            continue;
        }
        let next_m = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
        let beta = (momentum - 1.0) / next_m;
        for i in 0..dim {
            y[i] = cand[i] + beta * (cand[i] - theta[i]);
        }
        momentum = next_m;
        theta.copy_from_slice(&cand);
        f_theta = f_cand;
        // norm of the gradient mapping at y
        if moved_y / step <= erm.tol {
            break;
        }
        step *= 1.1;
    }

    let (heads, rows) = problem.split(&theta);
    Ok(ShallowFit {
        w: problem.full_w(rows),
        v: heads.chunks(r).map(|c| c.to_vec()).collect(),
        trainable_from,
        iterations,
        train_risk: f_theta,
    })
}

/// `MM = L*_frz − L*`: the best task-averaged risk reachable on top of the
/// frozen rows (fit on `n_large` samples per task, scored on `n_mc` fresh
/// ones) minus the noise floor `E[Z²]`. The last `new_rows_allowed` rows of
/// `frz` are replaced by learned rows.
pub fn estimate_mismatch(
    planted: &PlantedModel,
    frz: &[f64],
    new_rows_allowed: usize,
    n_large: usize,
    n_mc: usize,
    seed: u64,
) -> Result<MismatchEstimate> {
    let r = planted.config.r;
    if new_rows_allowed > r {
        return Err(Error::InvalidConfig(format!("{new_rows_allowed} new rows exceed r = {r}")));
    }
    let data = MultiTaskData::draw(planted, n_large, seed);
    let fit = fit_shallow(planted, &data, frz, r - new_rows_allowed, &ErmConfig::default(), seed)?;
    let l_frz = fit.population_risk(planted, n_mc, seed ^ 0x5eed)?;
    let l_star = planted.optimal_risk();
    Ok(MismatchEstimate {
        mm: l_frz.value - l_star,
        l_frz,
        l_star,
        train_risk: fit.train_risk,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least squares on `(ln N, ln risk)`.
pub fn fit_scaling_exponent(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 4 {
        return Err(Error::InvalidConfig(format!("need at least 4 points, got {}", points.len())));
    }
    if points.iter().any(|&(n, e)| !(n > 0.0) || !(e > 0.0)) {
        return Err(Error::InvalidConfig("scaling fit needs positive sample sizes and risks".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidConfig("scaling fit needs at least two distinct sample sizes".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(ScalingFit { slope, intercept, r2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub seed: u64,
    pub n: usize,
    pub r_frz: usize,
    pub excess: RiskEstimate,
    pub train_risk: f64,
}

/// Excess risk of the constrained ERM on `W_frz` for each `(seed, N)`.
/// Samples for smaller `N` are prefixes of those for larger `N`.
pub fn excess_risk_sweep(
    config: &crate::tasks::PlantedConfig,
    ns: &[usize],
    seeds: &[u64],
    n_mc: usize,
    erm: &ErmConfig,
) -> Result<Vec<SweepPoint>> {
    let n_max = ns.iter().copied().max().unwrap_or(0);
    let mut out = Vec::new();
    for &seed in seeds {
        let planted = PlantedModel::sample(config.clone(), seed)?;
        let full = MultiTaskData::draw(&planted, n_max, seed);
        let frz = planted.w_frz();
        for &n in ns {
            let data = MultiTaskData {
                x: full.x.iter().map(|x| x[..n * config.d].to_vec()).collect(),
                y: full.y.iter().map(|y| y[..n].to_vec()).collect(),
            };
            let fit = fit_shallow(&planted, &data, &frz, config.r_frz, erm, seed)?;
            out.push(SweepPoint {
                seed,
                n,
                r_frz: config.r_frz,
                excess: fit.excess_risk(&planted, n_mc, seed ^ 0xe4ce55),
                train_risk: fit.train_risk,
            });
        }
    }
    Ok(out)
}

/// Median over seeds of the excess risk at each `N`, as `(N, median)`.
pub fn median_by_n(points: &[SweepPoint]) -> Vec<(f64, f64)> {
    let mut ns: Vec<usize> = points.iter().map(|p| p.n).collect();
    ns.sort_unstable();
    ns.dedup();
    ns.into_iter()
        .map(|n| {
            let mut v: Vec<f64> = points.iter().filter(|p| p.n == n).map(|p| p.excess.value).collect();
            v.sort_by(f64::total_cmp);
            let m = v.len();
            let med = if m % 2 == 1 { v[m / 2] } else { 0.5 * (v[m / 2 - 1] + v[m / 2]) };
            (n as f64, med)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{Link, PlantedConfig};

    fn small() -> PlantedConfig {
        PlantedConfig {
            d: 8,
            r: 3,
            r_frz: 2,
            tasks: 2,
            ..PlantedConfig::default()
        }
    }

    #[test]
    fn truth_risk_is_noise_floor() {
        let m = PlantedModel::sample(PlantedConfig::default(), 1).unwrap();
        let est = estimate_population_risk(|x| m.truth(0, x), &m, 0, 20_000, 3).unwrap();
        assert!((est.value - 0.03).abs() <= 3.0 * est.std_error, "{est:?}");
        assert_eq!(est, estimate_population_risk(|x| m.truth(0, x), &m, 0, 20_000, 3).unwrap());
        assert!(estimate_population_risk(|_| 0.0, &m, 0, 99, 3).is_err());
    }

    #[test]
    fn zero_predictor_matches_second_moment() {
        let cfg = PlantedConfig {
            link: Link::Identity,
            ..PlantedConfig::default()
        };
        let m = PlantedModel::sample(cfg, 2).unwrap();
        let (r, d) = (m.config.r, m.config.d);
        // u = W*ᵀ v*;  E[(uᵀx)²] = ‖u‖² d/(d+2) for x uniform in the radius-√d ball
        let u: Vec<f64> = (0..d).map(|j| (0..r).map(|k| m.w_star[k * d + j] * m.v_star[1][k]).sum()).collect();
        let oracle = u.iter().map(|x| x * x).sum::<f64>() * d as f64 / (d as f64 + 2.0) + 0.03;
        let est = estimate_population_risk(|_| 0.0, &m, 1, 100_000, 5).unwrap();
        assert!((est.value - oracle).abs() <= 4.0 * est.std_error, "{} vs {oracle}", est.value);
    }

    #[test]
    fn scaling_fit_examples() {
        let pts: Vec<(f64, f64)> = [50.0, 100.0, 200.0, 400.0, 800.0].iter().map(|&n: &f64| (n, 3.0 / n.sqrt())).collect();
        let f = fit_scaling_exponent(&pts).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-9);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        let flat: Vec<(f64, f64)> = [1.0, 2.0, 3.0, 4.0].iter().map(|&n| (n, 0.7)).collect();
        assert!(fit_scaling_exponent(&flat).unwrap().slope.abs() < 1e-12);
        assert!(fit_scaling_exponent(&pts[..3]).is_err());
        assert!(fit_scaling_exponent(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0), (4.0, 1.0)]).is_err());
    }

    #[test]
    fn erm_recovers_truth_without_noise() {
        let mut cfg = small();
        cfg.noise = 0.0;
        let m = PlantedModel::sample(cfg, 4).unwrap();
        let data = MultiTaskData::draw(&m, 400, 4);
        let fit = fit_shallow(&m, &data, &m.w_frz(), 2, &ErmConfig::default(), 1).unwrap();
        assert!(fit.train_risk < 1e-6, "{}", fit.train_risk);
        assert!(fit.excess_risk(&m, 2000, 9).value < 1e-5);
    }

    #[test]
    fn erm_never_worse_than_start_and_respects_norms() {
        let m = PlantedModel::sample(small(), 6).unwrap();
        let data = MultiTaskData::draw(&m, 100, 6);
        let fit = fit_shallow(&m, &data, &m.w_frz(), 2, &ErmConfig::default(), 2).unwrap();
        assert!(fit.v.iter().all(|v| frobenius_norm(v) <= 1.0 + 1e-12));
        assert_eq!(&fit.w[..2 * 8], &m.w_frz()[..2 * 8]);
        // the truth is feasible, so the fit is at least as good on the training set
        let truth = ShallowFit {
            w: m.w_star.clone(),
            v: m.v_star.clone(),
            trainable_from: 2,
            iterations: 0,
            train_risk: 0.0,
        };
        let truth_risk: f64 = (0..2)
            .map(|t| {
                data.y[t]
                    .iter()
                    .enumerate()
                    .map(|(i, y)| (y - truth.predict(&m, t, &data.x[t][i * 8..(i + 1) * 8])).powi(2))
                    .sum::<f64>()
                    / 100.0
            })
            .sum::<f64>()
            / 2.0;
        assert!(fit.train_risk <= truth_risk + 1e-9, "{} > {truth_risk}", fit.train_risk);
    }

    #[test]
    fn mismatch_of_zero_features_is_signal_energy() {
        let cfg = PlantedConfig {
            link: Link::Identity,
            ..small()
        };
        let m = PlantedModel::sample(cfg, 3).unwrap();
        let (r, d) = (m.config.r, m.config.d);
        let est = estimate_mismatch(&m, &vec![0.0; r * d], 0, 500, 50_000, 8).unwrap();
        let signal: f64 = (0..2)
            .map(|t| {
                let u: Vec<f64> = (0..d).map(|j| (0..r).map(|k| m.w_star[k * d + j] * m.v_star[t][k]).sum()).collect();
                u.iter().map(|x| x * x).sum::<f64>() * d as f64 / (d as f64 + 2.0)
            })
            .sum::<f64>()
            / 2.0;
        assert!((est.mm - signal).abs() <= 4.0 * est.l_frz.std_error, "{} vs {signal}", est.mm);
    }

    #[test]
    fn orthogonal_frozen_rows_mismatch_more_than_compatible() {
        let m = PlantedModel::sample(small(), 5).unwrap();
        let (r, d) = (m.config.r, m.config.d);
        let compatible = estimate_mismatch(&m, &m.w_frz(), r - 2, 2000, 20_000, 1).unwrap();
        assert!(compatible.mm.abs() <= 3.0 * compatible.l_frz.std_error, "{compatible:?}");

        // Gram-Schmidt random vectors against the rows of W*
        let mut basis: Vec<Vec<f64>> = Vec::new();
        let mut rng = stream(11, 0, Purpose::Planted);
        let mut rows = Vec::new();
        for k in 0..r {
            let mut v = m.w_star[k * d..(k + 1) * d].to_vec();
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
                v.iter_mut().zip(b).for_each(|(a, c)| *a -= dot * c);
            }
            let n = frobenius_norm(&v);
            basis.push(v.into_iter().map(|a| a / n).collect());
        }
        for _ in 0..r {
            let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
                v.iter_mut().zip(b).for_each(|(a, c)| *a -= dot * c);
            }
            let n = frobenius_norm(&v);
            let v: Vec<f64> = v.into_iter().map(|a| a / n).collect();
            basis.push(v.clone());
            rows.extend(v);
        }
        let orth = estimate_mismatch(&m, &rows, 0, 2000, 20_000, 1).unwrap();
        assert!(orth.mm > 3.0 * orth.l_frz.std_error);
        assert!(orth.mm > compatible.mm);
    }
}
