//! Checkpoint container: `"ESPN"`, `u32` version, `u64` header length, a JSON
//! header with a section table, then the sections back to back. Float
//! sections are little-endian `f32`, mask sections are little-endian `u64`
//! bitset words.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BitMatrix, BitSet, NeuronMask, SupernetState, TaskId, TaskRecord, WeightMask};
use crate::nn::{Architecture, BnBank, BnLayer, DenseLayer, Matrix, ParamStore};

const MAGIC: &[u8; 4] = b"ESPN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    F32,
    U64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    pub dtype: Dtype,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskHeader {
    pub id: TaskId,
    pub new_nnz: u64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub has_head: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub architecture: Architecture,
    pub params_seed: u64,
    pub used: u64,
    pub task_ids: Vec<TaskId>,
    pub tasks: Vec<TaskHeader>,
    pub sections: Vec<Section>,
    /// Free-form run metadata (task descriptions, configs).
    #[serde(default)]
    pub metadata: serde_json::Value,
}

#[derive(Default)]
struct Writer {
    sections: Vec<Section>,
    data: Vec<u8>,
}

impl Writer {
    fn f32s(&mut self, name: String, xs: &[f32]) {
        self.sections.push(Section {
            name,
            dtype: Dtype::F32,
            bytes: xs.len() * 4,
        });
        for x in xs {
            self.data.extend_from_slice(&x.to_le_bytes());
        }
    }

    fn words(&mut self, name: String, bits: &BitSet) {
        self.sections.push(Section {
            name,
            dtype: Dtype::U64,
            bytes: bits.words().len() * 8,
        });
        for w in bits.words() {
            self.data.extend_from_slice(&w.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    sections: std::slice::Iter<'a, Section>,
    data: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, name: &str, dtype: Dtype, count: usize) -> Result<&'a [u8]> {
        let s = self
            .sections
            .next()
            .ok_or_else(|| Error::CorruptCheckpoint(format!("missing section `{name}`")))?;
        if s.name != name || s.dtype != dtype {
            return Err(Error::CorruptCheckpoint(format!(
                "expected section `{name}` ({dtype:?}), found `{}` ({:?})",
                s.name, s.dtype
            )));
        }
        let expected = count * dtype.width();
        if s.bytes != expected {
            return Err(Error::SectionLength {
                name: name.into(),
                expected,
                found: s.bytes,
            });
        }
        if self.data.len() < s.bytes {
            return Err(Error::SectionLength {
                name: name.into(),
                expected: s.bytes,
                found: self.data.len(),
            });
        }
        let (head, rest) = self.data.split_at(s.bytes);
        self.data = rest;
        Ok(head)
    }

    fn f32s(&mut self, name: String, count: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(&name, Dtype::F32, count)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn bits(&mut self, name: String, len: usize) -> Result<BitSet> {
        let words = self
            .take(&name, Dtype::U64, len.div_ceil(64))?
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        BitSet::from_words(len, words).ok_or_else(|| Error::CorruptCheckpoint(format!("stray bits in `{name}`")))
    }

    fn weight_mask(&mut self, prefix: &str, arch: &Architecture) -> Result<WeightMask> {
        let layers = (0..arch.maskable_layers())
            .map(|l| {
                let (o, i) = arch.weight_shape(l);
                let bits = self.bits(format!("{prefix}.l{l}"), o * i)?;
                BitMatrix::from_bits(o, i, bits).ok_or_else(|| Error::CorruptCheckpoint(format!("{prefix}.l{l}")))
            })
            .collect::<Result<_>>()?;
        Ok(WeightMask { layers })
    }

    fn dense(&mut self, prefix: &str, out: usize, inp: usize) -> Result<DenseLayer<f32>> {
        Ok(DenseLayer {
            weight: Matrix::from_vec(out, inp, self.f32s(format!("{prefix}.weight"), out * inp)?),
            bias: self.f32s(format!("{prefix}.bias"), out)?,
        })
    }
}

fn write_weight_mask(w: &mut Writer, prefix: &str, mask: &WeightMask) {
    for (l, m) in mask.layers.iter().enumerate() {
        w.words(format!("{prefix}.l{l}"), m.bits());
    }
}

fn write_dense(w: &mut Writer, prefix: &str, layer: &DenseLayer<f32>) {
    w.f32s(format!("{prefix}.weight"), layer.weight.data());
    w.f32s(format!("{prefix}.bias"), &layer.bias);
}

/// Serializes `state`; `metadata` is stored verbatim in the header.
pub fn to_bytes(state: &SupernetState, metadata: serde_json::Value) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    for (l, layer) in state.params.layers.iter().enumerate() {
        write_dense(&mut w, &format!("params.l{l}"), layer);
    }
    write_weight_mask(&mut w, "cumulative", &state.cumulative);
    for (l, b) in state.frozen_biases.iter().enumerate() {
        w.words(format!("frozen_biases.l{l}"), b);
    }
    let mut tasks = Vec::new();
    for (&id, rec) in &state.tasks {
        for (h, b) in rec.neurons.hidden.iter().enumerate() {
            w.words(format!("task{id}.neurons.h{}", h + 1), b);
        }
        write_weight_mask(&mut w, &format!("task{id}.weights"), &rec.weights);
        for (h, layer) in rec.bn.layers.iter().enumerate() {
            if let Some(bn) = layer {
                let p = format!("task{id}.bn.h{}", h + 1);
                w.f32s(format!("{p}.gamma"), &bn.gamma);
                w.f32s(format!("{p}.beta"), &bn.beta);
                w.f32s(format!("{p}.running_mean"), &bn.running_mean);
                w.f32s(format!("{p}.running_var"), &bn.running_var);
            }
        }
        if let Some(head) = &rec.head {
            write_dense(&mut w, &format!("task{id}.head"), head);
        }
        tasks.push(TaskHeader {
            id,
            new_nnz: rec.new_nnz,
            bn_momentum: rec.bn.momentum,
            bn_eps: rec.bn.eps,
            has_head: rec.head.is_some(),
        });
    }
    let header = Header {
        architecture: state.arch.clone(),
        params_seed: state.params.seed,
        used: state.used,
        task_ids: state.tasks.keys().copied().collect(),
        tasks,
        sections: w.sections,
        metadata,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + w.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&w.data);
    Ok(out)
}

/// Parses the fixed prefix and the JSON header; returns the header and the
/// section payload.
pub fn read_header(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 16 {
        return Err(Error::CorruptCheckpoint("truncated prefix".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let body = &bytes[16..];
    if header_len > body.len() as u64 {
        return Err(Error::CorruptCheckpoint(format!(
            "header length {header_len} exceeds the {} remaining bytes",
            body.len()
        )));
    }
    let (json, data) = body.split_at(header_len as usize);
    let header: Header = serde_json::from_slice(json).map_err(|e| Error::CorruptCheckpoint(format!("header: {e}")))?;
    Ok((header, data))
}

pub fn from_bytes(bytes: &[u8]) -> Result<(SupernetState, serde_json::Value)> {
    let (header, data) = read_header(bytes)?;
    let arch = header.architecture.clone();
    arch.validate()?;
    let mut r = Reader {
        sections: header.sections.iter(),
        data,
    };
    let layers = (0..arch.num_layers())
        .map(|l| {
            let (o, i) = arch.weight_shape(l);
            r.dense(&format!("params.l{l}"), o, i)
        })
        .collect::<Result<_>>()?;
    let params = ParamStore {
        layers,
        seed: header.params_seed,
    };
    let cumulative = r.weight_mask("cumulative", &arch)?;
    let frozen_biases = (0..arch.num_layers())
        .map(|l| r.bits(format!("frozen_biases.l{l}"), arch.layer_dims[l + 1]))
        .collect::<Result<Vec<_>>>()?;
    let mut tasks = BTreeMap::new();
    for t in &header.tasks {
        let id = t.id;
        let hidden = (1..=arch.hidden_layers())
            .map(|h| r.bits(format!("task{id}.neurons.h{h}"), arch.layer_dims[h]))
            .collect::<Result<_>>()?;
        let weights = r.weight_mask(&format!("task{id}.weights"), &arch)?;
        let mut bn = BnBank::new(&arch);
        bn.momentum = t.bn_momentum;
        bn.eps = t.bn_eps;
        for h in 1..=arch.hidden_layers() {
            let width = arch.layer_dims[h];
            if let Some(layer) = bn.hidden_mut(h) {
                let p = format!("task{id}.bn.h{h}");
                *layer = BnLayer {
                    gamma: r.f32s(format!("{p}.gamma"), width)?,
                    beta: r.f32s(format!("{p}.beta"), width)?,
                    running_mean: r.f32s(format!("{p}.running_mean"), width)?,
                    running_var: r.f32s(format!("{p}.running_var"), width)?,
                };
            }
        }
        let head = if t.has_head {
            let l = arch.num_layers() - 1;
            let (o, i) = arch.weight_shape(l);
            Some(r.dense(&format!("task{id}.head"), o, i)?)
        } else {
            None
        };
        tasks.insert(
            id,
            TaskRecord {
                neurons: NeuronMask { hidden },
                weights,
                bn,
                head,
                new_nnz: t.new_nnz,
            },
        );
    }
    if r.sections.next().is_some() || !r.data.is_empty() {
        return Err(Error::CorruptCheckpoint("trailing sections or bytes".into()));
    }
    let state = SupernetState {
        free: cumulative.complement(),
        used: header.used,
        arch,
        params,
        cumulative,
        tasks,
        frozen_biases,
    };
    state.check_invariants()?;
    Ok((state, header.metadata))
}

pub fn save_checkpoint(state: &SupernetState, path: &Path) -> Result<()> {
    save_checkpoint_with(state, path, serde_json::Value::Null)
}

pub fn save_checkpoint_with(state: &SupernetState, path: &Path, metadata: serde_json::Value) -> Result<()> {
    let bytes = to_bytes(state, metadata)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<SupernetState> {
    Ok(load_checkpoint_with(path)?.0)
}

pub fn load_checkpoint_with(path: &Path) -> Result<(SupernetState, serde_json::Value)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
