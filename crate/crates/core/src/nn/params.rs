use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Architecture, Matrix, Scalar};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer<F> {
    /// `(out, in)` row-major.
    pub weight: Matrix<F>,
    pub bias: Vec<F>,
}

impl<F: Scalar> DenseLayer<F> {
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn init<R: Rng + ?Sized>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        let weight = Matrix::from_fn(out_dim, in_dim, |_, _| F::of(dist.sample(rng)));
        Self {
            weight,
            bias: vec![F::zero(); out_dim],
        }
    }

    pub fn cast<G: Scalar>(&self) -> DenseLayer<G> {
        DenseLayer {
            weight: self.weight.cast(),
            bias: self.bias.iter().map(|&b| G::of(b.as_f64())).collect(),
        }
    }
}

/// All dense layers of the supernet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStore<F> {
    pub layers: Vec<DenseLayer<F>>,
    pub seed: u64,
}

impl<F: Scalar> ParamStore<F> {
    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let mut rng = stream(seed, 0, Purpose::Init);
        let layers = (0..arch.num_layers())
            .map(|l| {
                let (o, i) = arch.weight_shape(l);
                DenseLayer::init(o, i, &mut rng)
            })
            .collect();
        Self { layers, seed }
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            layers: self.layers.iter().map(DenseLayer::cast).collect(),
            seed: self.seed,
        }
    }

    pub fn matches(&self, arch: &Architecture) -> bool {
        self.layers.len() == arch.num_layers()
            && self.layers.iter().enumerate().all(|(l, layer)| {
                let (o, i) = arch.weight_shape(l);
                layer.weight.shape() == (o, i) && layer.bias.len() == o
            })
    }
}

/// Batch-norm parameters and running statistics of one hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnLayer<F> {
    pub gamma: Vec<F>,
    pub beta: Vec<F>,
    pub running_mean: Vec<F>,
    pub running_var: Vec<F>,
}

impl<F: Scalar> BnLayer<F> {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: vec![F::one(); width],
            beta: vec![F::zero(); width],
            running_mean: vec![F::zero(); width],
            running_var: vec![F::one(); width],
        }
    }

    pub fn cast<G: Scalar>(&self) -> BnLayer<G> {
        let c = |v: &[F]| v.iter().map(|&x| G::of(x.as_f64())).collect();
        BnLayer {
            gamma: c(&self.gamma),
            beta: c(&self.beta),
            running_mean: c(&self.running_mean),
            running_var: c(&self.running_var),
        }
    }
}

/// One task's batch-norm bank: an entry per hidden layer (`None` where the
/// layer has no batch norm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnBank<F> {
    pub layers: Vec<Option<BnLayer<F>>>,
    pub momentum: f64,
    pub eps: f64,
}

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

impl<F: Scalar> BnBank<F> {
    /// Fresh bank with `gamma = 1`, `beta = 0`, running mean 0 and variance 1.
    pub fn new(arch: &Architecture) -> Self {
        let layers = (1..=arch.hidden_layers())
            .map(|h| arch.has_batchnorm(h).then(|| BnLayer::new(arch.layer_dims[h])))
            .collect();
        Self {
            layers,
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    /// Layer for hidden layer `h` (1-based position in `layer_dims`).
    #[inline]
    pub fn hidden(&self, h: usize) -> Option<&BnLayer<F>> {
        self.layers.get(h - 1).and_then(Option::as_ref)
    }

    #[inline]
    pub fn hidden_mut(&mut self, h: usize) -> Option<&mut BnLayer<F>> {
        self.layers.get_mut(h - 1).and_then(Option::as_mut)
    }

    pub fn cast<G: Scalar>(&self) -> BnBank<G> {
        BnBank {
            layers: self.layers.iter().map(|l| l.as_ref().map(BnLayer::cast)).collect(),
            momentum: self.momentum,
            eps: self.eps,
        }
    }
}
