//! Multiply-accumulate counts of a dense net under a neuron mask.
//!
//! One MAC per applied weight; biases, batch norm and activations are not
//! counted. A private per-task head is excluded from totals.

use serde::{Deserialize, Serialize};

use crate::mask::NeuronMask;
use crate::nn::Architecture;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopReport {
    pub per_layer: Vec<u64>,
    pub total: u64,
    pub max_flops: u64,
    pub fraction: f64,
}

/// MACs of weight layer `layer`: active inputs times active outputs.
pub fn layer_flops(arch: &Architecture, neurons: &NeuronMask, layer: usize) -> u64 {
    (neurons.active_count(arch, layer) * neurons.active_count(arch, layer + 1)) as u64
}

/// Full-network MACs (`MAX_FLOPs`).
pub fn max_flops(arch: &Architecture) -> u64 {
    (0..arch.maskable_layers())
        .map(|l| (arch.layer_dims[l] * arch.layer_dims[l + 1]) as u64)
        .sum()
}

pub fn total_flops(arch: &Architecture, neurons: &NeuronMask) -> FlopReport {
    let per_layer: Vec<u64> = (0..arch.maskable_layers()).map(|l| layer_flops(arch, neurons, l)).collect();
    let total = per_layer.iter().sum();
    let max_flops = max_flops(arch);
    FlopReport {
        per_layer,
        total,
        max_flops,
        fraction: if max_flops == 0 { 0.0 } else { total as f64 / max_flops as f64 },
    }
}

/// Total MACs from active counts per layer (`counts[0]` = inputs).
pub(crate) fn flops_from_counts(arch: &Architecture, counts: &[usize]) -> u64 {
    (0..arch.maskable_layers()).map(|l| (counts[l] * counts[l + 1]) as u64).sum()
}

/// MACs attached to one neuron of hidden layer `hidden`: its active fan-in
/// plus its active fan-out, i.e. what pruning that neuron removes.
pub fn neuron_flops(arch: &Architecture, neurons: &NeuronMask, hidden: usize) -> u64 {
    let fan_in = neurons.active_count(arch, hidden - 1);
    let fan_out = if hidden < arch.maskable_layers() {
        neurons.active_count(arch, hidden + 1)
    } else {
        0
    };
    (fan_in + fan_out) as u64
}

/// Smallest achievable total with one neuron left in every hidden layer.
pub fn min_flops(arch: &Architecture) -> u64 {
    let mut counts = arch.layer_dims.clone();
    let nl = arch.num_layers();
    for c in counts.iter_mut().take(nl).skip(1) {
        *c = 1;
    }
    flops_from_counts(arch, &counts)
}
