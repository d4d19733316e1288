use serde::{Deserialize, Serialize};

use super::{Architecture, BnBank, Gradients, ParamStore, Scalar};
use crate::error::{Error, Result};
use crate::mask::{BitSet, WeightMask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerSpec {
    Sgd,
    Rmsprop { rho: f64, eps: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerSpec {
    pub fn rmsprop() -> Self {
        OptimizerSpec::Rmsprop { rho: 0.9, eps: 1e-8 }
    }

    pub fn adam(beta1: f64, beta2: f64) -> Self {
        OptimizerSpec::Adam { beta1, beta2, eps: 1e-8 }
    }
}

/// Which coordinates an optimizer step may touch.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainable {
    /// Maskable weights.
    pub weights: WeightMask,
    /// Whether a private head layer (beyond `weights`) is trainable.
    pub head: bool,
    /// Per weight layer.
    pub biases: Vec<BitSet>,
    /// Per hidden layer: neurons whose batch-norm gamma/beta may change.
    pub bn: Vec<BitSet>,
}

impl Trainable {
    pub fn nothing(arch: &Architecture) -> Self {
        Self {
            weights: WeightMask::empty(arch),
            head: false,
            biases: (0..arch.num_layers()).map(|l| BitSet::zeros(arch.layer_dims[l + 1])).collect(),
            bn: (1..=arch.hidden_layers()).map(|h| BitSet::zeros(arch.layer_dims[h])).collect(),
        }
    }

    pub fn everything(arch: &Architecture) -> Self {
        Self {
            weights: WeightMask::full(arch),
            head: true,
            biases: (0..arch.num_layers()).map(|l| BitSet::ones(arch.layer_dims[l + 1])).collect(),
            bn: (1..=arch.hidden_layers()).map(|h| BitSet::ones(arch.layer_dims[h])).collect(),
        }
    }

    fn weight_bits(&self, l: usize, len: usize) -> std::borrow::Cow<'_, BitSet> {
        match self.weights.layers.get(l) {
            Some(m) => std::borrow::Cow::Borrowed(m.bits()),
            None if self.head => std::borrow::Cow::Owned(BitSet::ones(len)),
            None => std::borrow::Cow::Owned(BitSet::zeros(len)),
        }
    }
}

#[derive(Debug, Clone)]
struct Moments<F> {
    m: Vec<F>,
    v: Vec<F>,
}

impl<F: Scalar> Moments<F> {
    fn new(len: usize) -> Self {
        Self {
            m: vec![F::zero(); len],
            v: vec![F::zero(); len],
        }
    }
}

/// Optimizer with per-coordinate moment buffers. Buffers of coordinates that
/// are never trainable stay at zero.
#[derive(Debug, Clone)]
pub struct OptState<F> {
    spec: OptimizerSpec,
    step: u64,
    weights: Vec<Moments<F>>,
    biases: Vec<Moments<F>>,
    gamma: Vec<Moments<F>>,
    beta: Vec<Moments<F>>,
}

struct Rule<F> {
    spec: OptimizerSpec,
    lr: F,
    bias1: F,
    bias2: F,
}

impl<F: Scalar> Rule<F> {
    #[inline]
    fn apply(&self, theta: &mut F, g: F, mom: &mut Moments<F>, i: usize) {
        match self.spec {
            OptimizerSpec::Sgd => *theta -= self.lr * g,
            OptimizerSpec::Rmsprop { rho, eps } => {
                let rho = F::of(rho);
                let v = rho * mom.v[i] + (F::one() - rho) * g * g;
                mom.v[i] = v;
                *theta -= self.lr * g / (v.sqrt() + F::of(eps));
            }
            OptimizerSpec::Adam { beta1, beta2, eps } => {
                let (b1, b2) = (F::of(beta1), F::of(beta2));
                let m = b1 * mom.m[i] + (F::one() - b1) * g;
                let v = b2 * mom.v[i] + (F::one() - b2) * g * g;
                mom.m[i] = m;
                mom.v[i] = v;
                let m_hat = m / self.bias1;
                let v_hat = v / self.bias2;
                *theta -= self.lr * m_hat / (v_hat.sqrt() + F::of(eps));
            }
        }
    }
}

impl<F: Scalar> OptState<F> {
    pub fn new(spec: OptimizerSpec, arch: &Architecture) -> Self {
        let widths = |range: std::ops::RangeInclusive<usize>| -> Vec<Moments<F>> {
            range.map(|h| Moments::new(arch.layer_dims[h])).collect()
        };
        Self {
            spec,
            step: 0,
            weights: (0..arch.num_layers())
                .map(|l| {
                    let (o, i) = arch.weight_shape(l);
                    Moments::new(o * i)
                })
                .collect(),
            biases: (0..arch.num_layers()).map(|l| Moments::new(arch.layer_dims[l + 1])).collect(),
            gamma: widths(1..=arch.hidden_layers()),
            beta: widths(1..=arch.hidden_layers()),
        }
    }

    pub fn spec(&self) -> OptimizerSpec {
        self.spec
    }

    /// Whether every moment entry outside `trainable` is still zero.
    pub fn untouched_outside(&self, trainable: &Trainable) -> bool {
        self.weights.iter().enumerate().all(|(l, mom)| {
            let bits = trainable.weight_bits(l, mom.m.len());
            (0..mom.m.len()).all(|i| bits.get(i) || (mom.m[i] == F::zero() && mom.v[i] == F::zero()))
        })
    }

    /// One update of every trainable coordinate. `bn` may be `None` when no
    /// batch-norm parameters are being trained.
    pub fn step(
        &mut self,
        params: &mut ParamStore<F>,
        bn: Option<&mut BnBank<F>>,
        grads: &Gradients<F>,
        trainable: &Trainable,
        lr: f64,
    ) -> Result<()> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {lr}")));
        }
        self.step += 1;
        let (bias1, bias2) = match self.spec {
            OptimizerSpec::Adam { beta1, beta2, .. } => (
                F::of(1.0 - beta1.powf(self.step as f64)),
                F::of(1.0 - beta2.powf(self.step as f64)),
            ),
            _ => (F::one(), F::one()),
        };
        let rule = Rule {
            spec: self.spec,
            lr: F::of(lr),
            bias1,
            bias2,
        };

        for (l, layer) in params.layers.iter_mut().enumerate() {
            let data = layer.weight.data_mut();
            let g = grads.weights[l].data();
            let bits = trainable.weight_bits(l, data.len());
            let mom = &mut self.weights[l];
            for i in bits.iter_ones() {
                rule.apply(&mut data[i], g[i], mom, i);
            }
            let gb = &grads.biases[l];
            let mom = &mut self.biases[l];
            for i in trainable.biases[l].iter_ones() {
                rule.apply(&mut layer.bias[i], gb[i], mom, i);
            }
        }

        if let Some(bn) = bn {
            for (hi, slot) in bn.layers.iter_mut().enumerate() {
                let (Some(layer), Some((gg, gbeta))) = (slot.as_mut(), grads.bn[hi].as_ref()) else {
                    continue;
                };
                for i in trainable.bn[hi].iter_ones() {
                    rule.apply(&mut layer.gamma[i], gg[i], &mut self.gamma[hi], i);
                    rule.apply(&mut layer.beta[i], gbeta[i], &mut self.beta[hi], i);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, HeadKind, Matrix};

    fn one_weight_arch() -> Architecture {
        Architecture::new(vec![1, 1], Activation::Identity, vec![], HeadKind::SharedSoftmax).unwrap()
    }

    fn grads_with(arch: &Architecture, g: f64) -> Gradients<f64> {
        let mut grads = Gradients::zeros(arch);
        grads.weights[0] = Matrix::from_vec(1, 1, vec![g]);
        grads
    }

    #[test]
    fn sgd_updates_trainable_only() {
        let arch = Architecture::mlp(&[2, 3, 2]);
        let mut params = ParamStore::<f64>::init(&arch, 3);
        let before = params.clone();
        let mut grads = Gradients::zeros(&arch);
        for m in &mut grads.weights {
            m.data_mut().iter_mut().for_each(|x| *x = 1.0);
        }
        let mut t = Trainable::nothing(&arch);
        t.weights.layers[0].set(1, 0, true);
        let mut opt = OptState::new(OptimizerSpec::Sgd, &arch);
        opt.step(&mut params, None, &grads, &t, 0.5).unwrap();
        for l in 0..2 {
            for (i, (&a, &b)) in params.layers[l].weight.data().iter().zip(before.layers[l].weight.data()).enumerate() {
                if l == 0 && i == 2 {
                    assert_eq!(a, b - 0.5);
                } else {
                    assert_eq!(a, b);
                }
            }
        }
    }

    #[test]
    fn empty_trainable_mask_changes_nothing() {
        let arch = Architecture::mlp(&[2, 3, 2]);
        let mut params = ParamStore::<f32>::init(&arch, 5);
        let mut bn = BnBank::new(&arch);
        let before = (params.clone(), bn.clone());
        let mut grads = Gradients::zeros(&arch);
        grads.weights[1].data_mut().iter_mut().for_each(|x| *x = 3.0);
        grads.bn[0].as_mut().unwrap().0.iter_mut().for_each(|x| *x = 3.0);
        let t = Trainable::nothing(&arch);
        let mut opt = OptState::new(OptimizerSpec::adam(0.9, 0.999), &arch);
        opt.step(&mut params, Some(&mut bn), &grads, &t, 0.1).unwrap();
        assert_eq!((params, bn), before);
        assert!(opt.untouched_outside(&t));
    }

    #[test]
    fn adam_first_step_matches_hand_evaluation() {
        // f(θ) = θ², θ0 = 1, so g = 2; β1 = 0, β2 = 0.999.
        let arch = one_weight_arch();
        let mut params = ParamStore::<f64>::init(&arch, 0);
        params.layers[0].weight.set(0, 0, 1.0);
        let mut opt = OptState::new(OptimizerSpec::adam(0.0, 0.999), &arch);
        let t = Trainable::everything(&arch);
        opt.step(&mut params, None, &grads_with(&arch, 2.0), &t, 0.1).unwrap();
        // m = 2, v = 0.001 * 4; bias-corrected m̂ = 2, v̂ = 0.004 / (1 - 0.999) = 4
        let v_hat: f64 = (0.001 * 4.0) / (1.0 - 0.999);
        let expected = 1.0 - 0.1 * (2.0 / (v_hat.sqrt() + 1e-8));
        assert!((params.layers[0].weight.get(0, 0) - expected).abs() < 1e-12);
        assert!((expected - 0.9).abs() < 1e-8);
    }

    #[test]
    fn rmsprop_step() {
        let arch = one_weight_arch();
        let mut params = ParamStore::<f64>::init(&arch, 0);
        params.layers[0].weight.set(0, 0, 1.0);
        let mut opt = OptState::new(OptimizerSpec::rmsprop(), &arch);
        opt.step(&mut params, None, &grads_with(&arch, 2.0), &Trainable::everything(&arch), 0.01)
            .unwrap();
        let v: f64 = 0.1 * 4.0;
        let expected = 1.0 - 0.01 * 2.0 / (v.sqrt() + 1e-8);
        assert!((params.layers[0].weight.get(0, 0) - expected).abs() < 1e-12);
    }

    #[test]
    fn non_positive_lr_rejected() {
        let arch = one_weight_arch();
        let mut params = ParamStore::<f64>::init(&arch, 0);
        let mut opt = OptState::new(OptimizerSpec::Sgd, &arch);
        let t = Trainable::everything(&arch);
        assert!(opt.step(&mut params, None, &grads_with(&arch, 1.0), &t, 0.0).is_err());
        assert!(opt.step(&mut params, None, &grads_with(&arch, 1.0), &t, -1.0).is_err());
    }
}
