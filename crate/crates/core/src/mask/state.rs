use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use super::{check_consistent, BitSet, NeuronMask, WeightMask};
use crate::error::{Error, Result};
use crate::nn::{Architecture, BnBank, DenseLayer, HeadKind, NetView, ParamStore};

pub type TaskId = u32;

/// Everything stored for one committed task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub neurons: NeuronMask,
    pub weights: WeightMask,
    pub bn: BnBank<f32>,
    /// Private head for per-task-head architectures.
    pub head: Option<DenseLayer<f32>>,
    /// Weights this task added to the cumulative mask.
    pub new_nnz: u64,
}

/// The supernet and its continual-learning bookkeeping.
///
/// Invariants: `cumulative` is the union of all task weight masks, `free` is
/// its complement, `used == cumulative.popcount()`, and a bias is frozen
/// exactly when some committed task has its neuron active.
#[derive(Debug, Clone, PartialEq)]
pub struct SupernetState {
    pub arch: Architecture,
    pub params: ParamStore<f32>,
    pub free: WeightMask,
    pub cumulative: WeightMask,
    pub tasks: BTreeMap<TaskId, TaskRecord>,
    /// Per weight layer, one bit per output neuron.
    pub frozen_biases: Vec<BitSet>,
    pub used: u64,
}

impl SupernetState {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let params = ParamStore::init(&arch, seed);
        Ok(Self {
            free: WeightMask::full(&arch),
            cumulative: WeightMask::empty(&arch),
            tasks: BTreeMap::new(),
            frozen_biases: (0..arch.num_layers()).map(|l| BitSet::zeros(arch.layer_dims[l + 1])).collect(),
            used: 0,
            params,
            arch,
        })
    }

    /// Total maskable weights `p`.
    pub fn total_weights(&self) -> u64 {
        self.arch.maskable_weights()
    }

    pub fn free_count(&self) -> u64 {
        self.total_weights() - self.used
    }

    pub fn task(&self, id: TaskId) -> Result<&TaskRecord> {
        self.tasks.get(&id).ok_or(Error::UnknownTask(id))
    }

    /// Inference view of a committed task.
    pub fn view(&self, id: TaskId) -> Result<(NetView<'_, f32>, &BnBank<f32>)> {
        let rec = self.task(id)?;
        Ok((
            NetView {
                arch: &self.arch,
                params: &self.params,
                head: rec.head.as_ref(),
                neurons: &rec.neurons,
                weights: &rec.weights,
            },
            &rec.bn,
        ))
    }

    /// Records a task and moves its weights from the free set to the frozen set.
    pub fn commit_task(
        &mut self,
        id: TaskId,
        neurons: NeuronMask,
        weights: WeightMask,
        bn: BnBank<f32>,
        head: Option<DenseLayer<f32>>,
    ) -> Result<()> {
        if self.tasks.contains_key(&id) {
            return Err(Error::DuplicateTask(id));
        }
        check_consistent(&self.arch, &neurons, &weights)?;
        if (self.arch.head == HeadKind::PerTaskLinearSigmoid) != head.is_some() {
            return Err(Error::InconsistentMask(
                "a private head is required exactly for per-task-head architectures".into(),
            ));
        }
        let new = weights.diff(&self.cumulative)?;
        let new_nnz = new.popcount();
        self.cumulative = self.cumulative.union(&weights)?;
        self.free = self.cumulative.complement();
        self.used = self.cumulative.popcount();
        for l in 0..self.arch.maskable_layers() {
            for j in neurons.active_indices(&self.arch, l + 1) {
                self.frozen_biases[l].set(j, true);
            }
        }
        self.tasks.insert(
            id,
            TaskRecord {
                neurons,
                weights,
                bn,
                head,
                new_nnz,
            },
        );
        Ok(())
    }

    /// Checks the bookkeeping invariants bit-exactly.
    pub fn check_invariants(&self) -> Result<()> {
        let mut union = WeightMask::empty(&self.arch);
        for (id, rec) in &self.tasks {
            check_consistent(&self.arch, &rec.neurons, &rec.weights)
                .map_err(|e| Error::InconsistentMask(format!("task {id}: {e}")))?;
            union = union.union(&rec.weights)?;
        }
        if union != self.cumulative {
            return Err(Error::InconsistentMask("cumulative mask is not the union of task masks".into()));
        }
        if !self.free.is_disjoint(&self.cumulative) || self.free.union(&self.cumulative)? != WeightMask::full(&self.arch)
        {
            return Err(Error::InconsistentMask("free mask is not the complement of the cumulative mask".into()));
        }
        if self.used != self.cumulative.popcount() {
            return Err(Error::InconsistentMask("used-weight count is stale".into()));
        }
        Ok(())
    }

    /// Hash of every frozen weight value and every frozen bias. Identical
    /// before and after training a later task.
    pub fn frozen_fingerprint(&self) -> u64 {
        self.fingerprint(&self.cumulative, &self.frozen_biases)
    }

    /// Hash of the weight values selected by `weights` and the biases selected
    /// by `biases` (one bitset per weight layer).
    pub fn fingerprint(&self, weights: &WeightMask, biases: &[BitSet]) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for (l, m) in weights.layers.iter().enumerate() {
            let data = self.params.layers[l].weight.data();
            for i in m.bits().iter_ones() {
                (l, i, data[i].to_bits()).hash(&mut h);
            }
        }
        for (l, bits) in biases.iter().enumerate() {
            for j in bits.iter_ones() {
                (l, j, self.params.layers[l].bias[j].to_bits()).hash(&mut h);
            }
        }
        h.finish()
    }
}
