//! FLOP-aware neuron pruning, magnitude weight pruning and their budgets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flops::{flops_from_counts, max_flops, min_flops, neuron_flops};
use crate::mask::{NeuronMask, WeightMask};
use crate::nn::{Architecture, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Geometric,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    /// Per-layer weights proportional to the square root of per-neuron MACs.
    FlopAware,
    /// Same weight for every layer.
    L1Uniform,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// FLOP budget as a fraction of the full network.
    pub gamma: f64,
    /// Fraction of the remaining free weights a task may claim.
    pub alpha: f64,
    pub schedule: Schedule,
    pub penalty: PenaltyKind,
    pub penalty_strength: f64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            gamma: 0.2,
            alpha: 0.05,
            schedule: Schedule::Geometric,
            penalty: PenaltyKind::FlopAware,
            penalty_strength: 1e-4,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidConfig(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidConfig(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if !(self.penalty_strength >= 0.0) {
            return Err(Error::InvalidConfig("penalty strength must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub target_flops: u64,
    pub target_new_nnz: u64,
}

impl Budget {
    /// `⌊γ · MAX_FLOPs⌋` and the allocation rule for the current usage.
    pub fn for_task(arch: &Architecture, gamma: f64, alpha: f64, used: u64) -> Result<Self> {
        let max = max_flops(arch);
        Ok(Self {
            target_flops: ((gamma * max as f64).floor() as u64).min(max),
            target_new_nnz: nnz_budget(arch.maskable_weights(), used, alpha)?,
        })
    }
}

/// New weights granted to the next task: `⌈(p − p_used) · α⌉`.
pub fn nnz_budget(p: u64, p_used: u64, alpha: f64) -> Result<u64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidConfig(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if p_used > p {
        return Err(Error::InvalidConfig(format!("{p_used} used weights exceed total {p}")));
    }
    let free = p - p_used;
    // exact ceiling; alpha * free can land a hair above an integer in floating point
    let raw = alpha * free as f64;
    let mut b = raw.ceil() as u64;
    if b > 0 && ((b - 1) as f64) >= raw {
        b -= 1;
    }
    Ok(b.min(free))
}

/// Per-layer penalty weights over batch-norm layers, normalized to sum to one:
/// `λ_l = √F_l / Σ_i √F_i` with `F_l` the MACs attached to one neuron of
/// hidden layer `l` under the current mask. Layers without batch norm get 0.
pub fn lambda_weights(arch: &Architecture, neurons: &NeuronMask) -> Result<Vec<f64>> {
    let loads: Vec<f64> = (1..=arch.hidden_layers())
        .map(|h| {
            if arch.has_batchnorm(h) {
                neuron_flops(arch, neurons, h) as f64
            } else {
                0.0
            }
        })
        .collect();
    normalized_sqrt(&loads)
}

/// `√x_l / Σ √x_i`.
pub fn normalized_sqrt(flops: &[f64]) -> Result<Vec<f64>> {
    let roots: Vec<f64> = flops.iter().map(|f| f.max(0.0).sqrt()).collect();
    let sum: f64 = roots.iter().sum();
    if sum <= 0.0 {
        return Err(Error::ZeroFlops);
    }
    Ok(roots.iter().map(|r| r / sum).collect())
}

/// Equal weight `1 / (#batch-norm layers)` on every batch-norm layer.
pub fn uniform_weights(arch: &Architecture) -> Vec<f64> {
    let k = (1..=arch.hidden_layers()).filter(|&h| arch.has_batchnorm(h)).count().max(1);
    (1..=arch.hidden_layers())
        .map(|h| if arch.has_batchnorm(h) { 1.0 / k as f64 } else { 0.0 })
        .collect()
}

/// `R(Γ) = Σ_l λ_l ‖Γ_l‖₁` over active neurons.
pub fn penalty_value(scores: &[&[f32]], lambda: &[f64], active: &NeuronMask) -> f64 {
    scores
        .iter()
        .zip(lambda)
        .zip(&active.hidden)
        .map(|((g, &lam), bits)| lam * bits.iter_ones().map(|j| g[j].abs() as f64).sum::<f64>())
        .sum()
}

/// Subgradient of `R` on the scores: `λ_l · sign(Γ_lj)` for active neurons
/// (0 at `Γ = 0`), zero elsewhere.
pub fn penalty_grad(scores: &[&[f32]], lambda: &[f64], active: &NeuronMask) -> Vec<Vec<f32>> {
    scores
        .iter()
        .zip(lambda)
        .zip(&active.hidden)
        .map(|((g, &lam), bits)| {
            let mut out = vec![0.0f32; g.len()];
            for j in bits.iter_ones() {
                let s = if g[j] > 0.0 {
                    1.0
                } else if g[j] < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                out[j] = (lam * s) as f32;
            }
            out
        })
        .collect()
}

/// Intermediate `(FLOPs, new-weight)` targets after pruning epoch `epoch` of `epochs`.
///
/// FLOPs follow `start · (target/start)^{e/P}` (geometric) or a straight line;
/// new weights interpolate linearly. Epoch 0 returns the start values and the
/// last epoch returns the budget exactly.
pub fn schedule_targets(
    epoch: usize,
    epochs: usize,
    start_flops: u64,
    budget: Budget,
    start_new_nnz: u64,
    schedule: Schedule,
) -> (u64, u64) {
    let epochs = epochs.max(1);
    let e = epoch.min(epochs);
    if e == epochs {
        return (budget.target_flops, budget.target_new_nnz);
    }
    if e == 0 {
        return (start_flops, start_new_nnz);
    }
    let frac = e as f64 / epochs as f64;
    let flops = match schedule {
        Schedule::Geometric if start_flops > 0 && budget.target_flops > 0 => {
            let ratio = budget.target_flops as f64 / start_flops as f64;
            (start_flops as f64 * ratio.powf(frac)).floor() as u64
        }
        _ => lerp(start_flops, budget.target_flops, e, epochs),
    };
    let nnz = lerp(start_new_nnz, budget.target_new_nnz, e, epochs);
    // never overshoot the budget in the direction of travel
    let flops = if start_flops >= budget.target_flops {
        flops.max(budget.target_flops)
    } else {
        flops.min(budget.target_flops)
    };
    let nnz = if start_new_nnz >= budget.target_new_nnz {
        nnz.max(budget.target_new_nnz)
    } else {
        nnz.min(budget.target_new_nnz)
    };
    (flops, nnz)
}

fn lerp(start: u64, end: u64, e: usize, epochs: usize) -> u64 {
    let (s, t) = (start as i128, end as i128);
    (s + (t - s) * e as i128 / epochs as i128) as u64
}

/// Greedy FLOP-targeted neuron removal.
///
/// Repeatedly drops the active hidden neuron with the smallest `|Γ|` (ties by
/// `(layer, index)`), skipping the last active neuron of any layer, until the
/// total MACs are at most `flops_target`. Layers without scores (no batch
/// norm) are never pruned.
pub fn prune_neurons_to_flops(
    arch: &Architecture,
    scores: &[Option<&[f32]>],
    current: &NeuronMask,
    flops_target: u64,
) -> Result<NeuronMask> {
    let mut counts: Vec<usize> = (0..=arch.num_layers()).map(|l| current.active_count(arch, l)).collect();
    let mut total = flops_from_counts(arch, &counts);
    if total <= flops_target {
        return Ok(current.clone());
    }
    let floor = min_flops(arch);
    if flops_target < floor {
        return Err(Error::InfeasibleFlops {
            target: flops_target,
            minimum: floor,
        });
    }

    let mut candidates: Vec<(f32, usize, usize)> = Vec::new();
    for h in 1..=arch.hidden_layers() {
        if let Some(g) = scores.get(h - 1).copied().flatten() {
            for j in current.hidden[h - 1].iter_ones() {
                candidates.push((g[j].abs(), h, j));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut out = current.clone();
    for (_, h, j) in candidates {
        if total <= flops_target {
            break;
        }
        if counts[h] <= 1 {
            continue;
        }
        out.hidden[h - 1].set(j, false);
        counts[h] -= 1;
        total = flops_from_counts(arch, &counts);
    }
    if total > flops_target {
        return Err(Error::InfeasibleFlops {
            target: flops_target,
            minimum: total,
        });
    }
    Ok(out)
}

/// How frozen weights inside the active region are reused.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrozenReuse {
    /// Frozen weights with magnitude at least the free-weight threshold.
    Threshold,
    /// Every frozen weight in the region.
    All,
}

/// Magnitude pruning over free and frozen weights with one threshold.
///
/// Within the region of weights joining active neurons, `τ` is the magnitude
/// of the `new_nnz_budget`-th largest free weight. The result holds exactly
/// the top-`budget` free weights (ties by `(layer, row, col)`) plus the frozen
/// weights with `|w| ≥ τ`. When the budget is zero or covers every free weight
/// in the region, `τ = 0` and all frozen weights in the region are reused.
pub fn prune_weights(
    arch: &Architecture,
    params: &ParamStore<f32>,
    free: &WeightMask,
    frozen: &WeightMask,
    neurons: &NeuronMask,
    new_nnz_budget: u64,
    reuse: FrozenReuse,
) -> Result<WeightMask> {
    let region = WeightMask::region(arch, neurons);
    let free_region = region.intersect(free)?;
    let frozen_region = region.intersect(frozen)?;
    let free_count = free_region.popcount();

    let mut out = WeightMask::empty(arch);
    let tau = if new_nnz_budget == 0 {
        0.0
    } else if new_nnz_budget >= free_count {
        out = free_region.clone();
        0.0
    } else {
        // (magnitude, flat layer/row/col order)
        let mut cand: Vec<(f32, u32, u32)> = Vec::with_capacity(free_count as usize);
        for (l, m) in free_region.layers.iter().enumerate() {
            let data = params.layers[l].weight.data();
            for i in m.bits().iter_ones() {
                cand.push((data[i].abs(), l as u32, i as u32));
            }
        }
        let k = new_nnz_budget as usize;
        let order = |a: &(f32, u32, u32), b: &(f32, u32, u32)| {
            b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
        };
        cand.select_nth_unstable_by(k - 1, order);
        let tau = cand[k - 1].0;
        for &(_, l, i) in &cand[..k] {
            out.layers[l as usize].bits_mut().set(i as usize, true);
        }
        tau
    };

    for (l, m) in frozen_region.layers.iter().enumerate() {
        let data = params.layers[l].weight.data();
        for i in m.bits().iter_ones() {
            if reuse == FrozenReuse::All || data[i].abs() >= tau {
                out.layers[l].bits_mut().set(i, true);
            }
        }
    }
    Ok(out)
}
