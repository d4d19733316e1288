//! Bitmask algebra over supernet weights and neurons, and the continual
//! learning bookkeeping built on it.

mod bitset;
mod state;

pub use bitset::BitSet;
pub use state::{SupernetState, TaskId, TaskRecord};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Architecture;

/// Row-major bit matrix congruent to one weight matrix.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    bits: BitSet,
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: BitSet::zeros(rows * cols),
        }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: BitSet::ones(rows * cols),
        }
    }

    pub fn from_bits(rows: usize, cols: usize, bits: BitSet) -> Option<Self> {
        (bits.len() == rows * cols).then_some(Self { rows, cols, bits })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn bits(&self) -> &BitSet {
        &self.bits
    }

    #[inline]
    pub fn bits_mut(&mut self) -> &mut BitSet {
        &mut self.bits
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits.get(r * self.cols + c)
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.bits.set(r * self.cols + c, v)
    }

    pub fn count_ones(&self) -> usize {
        self.bits.count_ones()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskOp {
    Union,
    Intersect,
    Diff,
}

/// One bit per maskable weight, laid out layer by layer.
///
/// A private per-task head is not maskable, so for such architectures the
/// mask has one layer fewer than the network.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WeightMask {
    pub layers: Vec<BitMatrix>,
}

impl WeightMask {
    pub fn full(arch: &Architecture) -> Self {
        Self::build(arch, BitMatrix::ones)
    }

    pub fn empty(arch: &Architecture) -> Self {
        Self::build(arch, BitMatrix::zeros)
    }

    fn build(arch: &Architecture, f: impl Fn(usize, usize) -> BitMatrix) -> Self {
        Self {
            layers: (0..arch.maskable_layers())
                .map(|l| {
                    let (o, i) = arch.weight_shape(l);
                    f(o, i)
                })
                .collect(),
        }
    }

    /// Every weight whose two endpoint neurons are active in `neurons`.
    pub fn region(arch: &Architecture, neurons: &NeuronMask) -> Self {
        let mut m = Self::empty(arch);
        for (l, layer) in m.layers.iter_mut().enumerate() {
            let ins = neurons.active_indices(arch, l);
            for r in neurons.active_indices(arch, l + 1) {
                for &c in &ins {
                    layer.set(r, c, true);
                }
            }
        }
        m
    }

    pub fn congruent(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.rows == b.rows && a.cols == b.cols)
    }

    pub fn matches(&self, arch: &Architecture) -> bool {
        self.layers.len() == arch.maskable_layers()
            && self.layers.iter().enumerate().all(|(l, m)| (m.rows, m.cols) == arch.weight_shape(l))
    }

    pub fn combine(&self, other: &Self, op: MaskOp) -> Result<Self> {
        if !self.congruent(other) {
            return Err(Error::InconsistentMask("weight masks are not shape-congruent".into()));
        }
        let layers = self
            .layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| BitMatrix {
                rows: a.rows,
                cols: a.cols,
                bits: match op {
                    MaskOp::Union => a.bits.union(&b.bits),
                    MaskOp::Intersect => a.bits.intersect(&b.bits),
                    MaskOp::Diff => a.bits.difference(&b.bits),
                },
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        self.combine(other, MaskOp::Union)
    }

    pub fn intersect(&self, other: &Self) -> Result<Self> {
        self.combine(other, MaskOp::Intersect)
    }

    pub fn diff(&self, other: &Self) -> Result<Self> {
        self.combine(other, MaskOp::Diff)
    }

    pub fn complement(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|m| BitMatrix {
                    rows: m.rows,
                    cols: m.cols,
                    bits: m.bits.complement(),
                })
                .collect(),
        }
    }

    pub fn popcount(&self) -> u64 {
        self.layers.iter().map(|m| m.count_ones() as u64).sum()
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.congruent(other) && self.layers.iter().zip(&other.layers).all(|(a, b)| a.bits.is_subset(&b.bits))
    }

    pub fn is_disjoint(&self, other: &Self) -> bool {
        self.congruent(other)
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.bits.is_disjoint(&b.bits))
    }

    /// Mask bit for weight `(r, c)` of layer `l`; layers beyond the mask are
    /// unmasked (private heads).
    #[inline]
    pub fn get(&self, l: usize, r: usize, c: usize) -> bool {
        self.layers.get(l).is_none_or(|m| m.get(r, c))
    }
}

/// Active flags for every hidden neuron. Input and output neurons are always active.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NeuronMask {
    pub hidden: Vec<BitSet>,
}

impl NeuronMask {
    pub fn full(arch: &Architecture) -> Self {
        Self {
            hidden: (1..=arch.hidden_layers()).map(|h| BitSet::ones(arch.layer_dims[h])).collect(),
        }
    }

    pub fn matches(&self, arch: &Architecture) -> bool {
        self.hidden.len() == arch.hidden_layers()
            && self.hidden.iter().enumerate().all(|(i, b)| b.len() == arch.layer_dims[i + 1])
    }

    /// Whether neuron `j` of layer `layer` (index into `layer_dims`) is active.
    #[inline]
    pub fn is_active(&self, arch: &Architecture, layer: usize, j: usize) -> bool {
        if layer == 0 || layer == arch.num_layers() {
            true
        } else {
            self.hidden[layer - 1].get(j)
        }
    }

    pub fn active_count(&self, arch: &Architecture, layer: usize) -> usize {
        if layer == 0 || layer == arch.num_layers() {
            arch.layer_dims[layer]
        } else {
            self.hidden[layer - 1].count_ones()
        }
    }

    pub fn active_indices(&self, arch: &Architecture, layer: usize) -> Vec<usize> {
        if layer == 0 || layer == arch.num_layers() {
            (0..arch.layer_dims[layer]).collect()
        } else {
            self.hidden[layer - 1].iter_ones().collect()
        }
    }

    pub fn total_active_hidden(&self) -> usize {
        self.hidden.iter().map(BitSet::count_ones).sum()
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.hidden.len() == other.hidden.len()
            && self.hidden.iter().zip(&other.hidden).all(|(a, b)| a.is_subset(b))
    }
}

/// Checks that every weight set in `weights` joins two active neurons.
pub fn check_consistent(arch: &Architecture, neurons: &NeuronMask, weights: &WeightMask) -> Result<()> {
    if !neurons.matches(arch) {
        return Err(Error::InconsistentMask("neuron mask does not match architecture".into()));
    }
    if !weights.matches(arch) {
        return Err(Error::InconsistentMask("weight mask does not match architecture".into()));
    }
    for (l, m) in weights.layers.iter().enumerate() {
        for idx in m.bits.iter_ones() {
            let (r, c) = (idx / m.cols, idx % m.cols);
            if !neurons.is_active(arch, l, c) || !neurons.is_active(arch, l + 1, r) {
                return Err(Error::InconsistentMask(format!(
                    "layer {l} weight ({r}, {c}) touches an inactive neuron"
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> Architecture {
        Architecture::mlp(&[3, 4, 2])
    }

    #[test]
    fn region_respects_neurons() {
        let a = arch();
        let mut n = NeuronMask::full(&a);
        n.hidden[0].set(1, false);
        let r = WeightMask::region(&a, &n);
        assert_eq!(r.popcount(), 3 * 3 + 3 * 2);
        check_consistent(&a, &n, &r).unwrap();
        assert!(check_consistent(&a, &n, &WeightMask::full(&a)).is_err());
    }

    #[test]
    fn diff_of_self_is_empty_and_union_with_complement_is_full() {
        let a = arch();
        let mut m = WeightMask::empty(&a);
        m.layers[0].set(0, 1, true);
        m.layers[1].set(1, 3, true);
        assert_eq!(m.diff(&m).unwrap().popcount(), 0);
        assert_eq!(m.union(&m.complement()).unwrap(), WeightMask::full(&a));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let m1 = WeightMask::full(&arch());
        let m2 = WeightMask::full(&Architecture::mlp(&[3, 5, 2]));
        assert!(m1.union(&m2).is_err());
    }
}
