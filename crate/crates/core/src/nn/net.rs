//! Mask-aware forward and backward passes.
//!
//! Both passes work on a compacted network: for every weight layer only the
//! rows and columns of active neurons are gathered (with the weight mask
//! applied), so pruned neurons cost nothing and contribute exactly zero.
//! Gradients are scattered back to full-size buffers.

use serde::{Deserialize, Serialize};

use super::{Architecture, BnBank, DenseLayer, HeadKind, Matrix, ParamStore, Scalar};
use crate::error::{Error, Result};
use crate::mask::{NeuronMask, WeightMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// A task's view of the supernet: shared parameters plus the masks selecting
/// its subnetwork. `head` replaces the last layer when the task owns a
/// private head.
#[derive(Clone, Copy)]
pub struct NetView<'a, F> {
    pub arch: &'a Architecture,
    pub params: &'a ParamStore<F>,
    pub head: Option<&'a DenseLayer<F>>,
    pub neurons: &'a NeuronMask,
    pub weights: &'a WeightMask,
}

impl<'a, F: Scalar> NetView<'a, F> {
    fn layer(&self, l: usize) -> &'a DenseLayer<F> {
        match self.head {
            Some(h) if l + 1 == self.arch.num_layers() => h,
            _ => &self.params.layers[l],
        }
    }

    fn validate(&self, inputs: &Matrix<F>) -> Result<()> {
        let arch = self.arch;
        if inputs.rows() == 0 {
            return Err(Error::EmptyBatch);
        }
        if inputs.cols() != arch.input_dim() {
            return Err(Error::ShapeMismatch {
                layer: 0,
                detail: format!("input has {} columns, expected {}", inputs.cols(), arch.input_dim()),
            });
        }
        if !self.params.matches(arch) {
            let layer = (0..arch.num_layers())
                .find(|&l| {
                    self.params.layers.get(l).is_none_or(|p| p.weight.shape() != arch.weight_shape(l))
                })
                .unwrap_or(0);
            return Err(Error::ShapeMismatch {
                layer,
                detail: "parameters do not match architecture".into(),
            });
        }
        if let Some(h) = self.head {
            let l = arch.num_layers() - 1;
            if h.weight.shape() != arch.weight_shape(l) {
                return Err(Error::ShapeMismatch {
                    layer: l,
                    detail: "private head has the wrong shape".into(),
                });
            }
        }
        if !self.neurons.matches(arch) {
            return Err(Error::ShapeMismatch {
                layer: 0,
                detail: "neuron mask does not match architecture".into(),
            });
        }
        if !self.weights.matches(arch) {
            let layer = (0..self.weights.layers.len())
                .find(|&l| {
                    let m = &self.weights.layers[l];
                    l >= arch.maskable_layers() || (m.rows(), m.cols()) != arch.weight_shape(l)
                })
                .unwrap_or(self.weights.layers.len());
            return Err(Error::ShapeMismatch {
                layer,
                detail: "weight mask does not match architecture".into(),
            });
        }
        Ok(())
    }
}

struct LayerCache<F> {
    active_in: Vec<usize>,
    active_out: Vec<usize>,
    input: Matrix<F>,
    weight: Matrix<F>,
    /// Hidden layers only: normalized activations (BN) and the activation input.
    xhat: Option<Matrix<F>>,
    inv_std: Vec<F>,
    batch_mean: Vec<F>,
    batch_var: Vec<F>,
    pre_act: Option<Matrix<F>>,
}

/// Everything `backward` needs from a forward pass.
pub struct ForwardCache<F> {
    mode: Mode,
    layers: Vec<LayerCache<F>>,
    output: Matrix<F>,
}

impl<F: Scalar> ForwardCache<F> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn output(&self) -> &Matrix<F> {
        &self.output
    }
}

/// Full-size gradients; entries outside the subnetwork are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub weights: Vec<Matrix<F>>,
    pub biases: Vec<Vec<F>>,
    /// `(d gamma, d beta)` per hidden layer with batch norm.
    pub bn: Vec<Option<(Vec<F>, Vec<F>)>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn zeros(arch: &Architecture) -> Self {
        Self {
            weights: (0..arch.num_layers())
                .map(|l| {
                    let (o, i) = arch.weight_shape(l);
                    Matrix::zeros(o, i)
                })
                .collect(),
            biases: (0..arch.num_layers()).map(|l| vec![F::zero(); arch.layer_dims[l + 1]]).collect(),
            bn: (1..=arch.hidden_layers())
                .map(|h| {
                    arch.has_batchnorm(h)
                        .then(|| (vec![F::zero(); arch.layer_dims[h]], vec![F::zero(); arch.layer_dims[h]]))
                })
                .collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        let z = |v: &[F]| v.iter().all(|x| *x == F::zero());
        self.weights.iter().all(|m| z(m.data()))
            && self.biases.iter().all(|b| z(b))
            && self.bn.iter().flatten().all(|(g, b)| z(g) && z(b))
    }
}

fn gather_weights<F: Scalar>(
    layer: &DenseLayer<F>,
    mask: &WeightMask,
    l: usize,
    rows: &[usize],
    cols: &[usize],
) -> Matrix<F> {
    let mut out = Matrix::zeros(rows.len(), cols.len());
    let masked = mask.layers.get(l);
    for (i, &r) in rows.iter().enumerate() {
        let src = layer.weight.row(r);
        let dst = out.row_mut(i);
        match masked {
            Some(m) => {
                for (j, &c) in cols.iter().enumerate() {
                    if m.get(r, c) {
                        dst[j] = src[c];
                    }
                }
            }
            None => {
                for (j, &c) in cols.iter().enumerate() {
                    dst[j] = src[c];
                }
            }
        }
    }
    out
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Forward pass. In train mode batch norm normalizes with batch statistics
/// (population variance) and updates the running statistics of `bn`; in eval
/// mode it uses the running statistics and `bn` is left untouched.
pub fn forward<F: Scalar>(
    view: &NetView<'_, F>,
    bn: &mut BnBank<F>,
    inputs: &Matrix<F>,
    mode: Mode,
) -> Result<(Matrix<F>, ForwardCache<F>)> {
    let cache = forward_impl(view, bn, inputs, mode)?;
    if mode == Mode::Train {
        let m = F::of(bn.momentum);
        for (idx, lc) in cache.layers.iter().enumerate() {
            let h = idx + 1;
            if lc.xhat.is_none() || h > view.arch.hidden_layers() {
                continue;
            }
            let layer = bn.hidden_mut(h).expect("bn layer present");
            for (k, &j) in lc.active_out.iter().enumerate() {
                layer.running_mean[j] = (F::one() - m) * layer.running_mean[j] + m * lc.batch_mean[k];
                layer.running_var[j] = (F::one() - m) * layer.running_var[j] + m * lc.batch_var[k];
            }
        }
    }
    Ok((cache.output.clone(), cache))
}

/// Eval-mode forward that never mutates anything.
pub fn predict<F: Scalar>(view: &NetView<'_, F>, bn: &BnBank<F>, inputs: &Matrix<F>) -> Result<Matrix<F>> {
    Ok(forward_impl(view, bn, inputs, Mode::Eval)?.output)
}

fn forward_impl<F: Scalar>(
    view: &NetView<'_, F>,
    bn: &BnBank<F>,
    inputs: &Matrix<F>,
    mode: Mode,
) -> Result<ForwardCache<F>> {
    view.validate(inputs)?;
    let arch = view.arch;
    let n = inputs.rows();
    let nl = arch.num_layers();
    let eps = F::of(bn.eps);
    let mut h = inputs.clone();
    let mut layers = Vec::with_capacity(nl);

    for l in 0..nl {
        let active_in = view.neurons.active_indices(arch, l);
        let active_out = view.neurons.active_indices(arch, l + 1);
        let dense = view.layer(l);
        let weight = gather_weights(dense, view.weights, l, &active_out, &active_in);
        let mut z = Matrix::product(&h, false, &weight, true);
        for r in 0..n {
            let row = z.row_mut(r);
            for (k, &j) in active_out.iter().enumerate() {
                row[k] += dense.bias[j];
            }
        }

        let mut lc = LayerCache {
            active_in,
            active_out,
            input: std::mem::replace(&mut h, Matrix::zeros(0, 0)),
            weight,
            xhat: None,
            inv_std: Vec::new(),
            batch_mean: Vec::new(),
            batch_var: Vec::new(),
            pre_act: None,
        };

        if l + 1 == nl {
            if arch.head == HeadKind::PerTaskLinearSigmoid {
                for v in z.data_mut() {
                    *v = F::of(sigmoid(v.as_f64()));
                }
            }
            h = z;
            layers.push(lc);
            break;
        }

        let hidden = l + 1;
        let width = lc.active_out.len();
        if let Some(bnl) = bn.hidden(hidden) {
            let (mean, var) = match mode {
                Mode::Train => {
                    let inv_n = F::one() / F::of(n as f64);
                    let mut mean = vec![F::zero(); width];
                    for r in 0..n {
                        for (k, &v) in z.row(r).iter().enumerate() {
                            mean[k] += v;
                        }
                    }
                    mean.iter_mut().for_each(|m| *m *= inv_n);
                    let mut var = vec![F::zero(); width];
                    for r in 0..n {
                        for (k, &v) in z.row(r).iter().enumerate() {
                            let d = v - mean[k];
                            var[k] += d * d;
                        }
                    }
                    var.iter_mut().for_each(|v| *v *= inv_n);
                    (mean, var)
                }
                Mode::Eval => (
                    lc.active_out.iter().map(|&j| bnl.running_mean[j]).collect(),
                    lc.active_out.iter().map(|&j| bnl.running_var[j]).collect(),
                ),
            };
            let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
            let gamma: Vec<F> = lc.active_out.iter().map(|&j| bnl.gamma[j]).collect();
            let beta: Vec<F> = lc.active_out.iter().map(|&j| bnl.beta[j]).collect();
            let mut xhat = z;
            let mut pre = Matrix::zeros(n, width);
            for r in 0..n {
                let xr = xhat.row_mut(r);
                let pr = pre.row_mut(r);
                for k in 0..width {
                    xr[k] = (xr[k] - mean[k]) * inv_std[k];
                    pr[k] = gamma[k] * xr[k] + beta[k];
                }
            }
            lc.xhat = Some(xhat);
            lc.inv_std = inv_std;
            lc.batch_mean = mean;
            lc.batch_var = var;
            lc.pre_act = Some(pre);
        } else {
            lc.pre_act = Some(z);
        }

        let act = arch.activation;
        let pre = lc.pre_act.as_ref().unwrap();
        h = Matrix::from_vec(
            n,
            width,
            pre.data().iter().map(|&v| F::of(act.apply(v.as_f64()))).collect(),
        );
        layers.push(lc);
    }

    Ok(ForwardCache {
        mode,
        layers,
        output: h,
    })
}

/// Gradients of the loss with respect to all weights, biases and batch-norm
/// affine parameters, given `d loss / d outputs`.
pub fn backward<F: Scalar>(
    view: &NetView<'_, F>,
    bn: &BnBank<F>,
    cache: &ForwardCache<F>,
    loss_grad: &Matrix<F>,
) -> Result<Gradients<F>> {
    if cache.mode != Mode::Train {
        return Err(Error::EvalCache);
    }
    let arch = view.arch;
    let nl = arch.num_layers();
    let n = cache.output.rows();
    if loss_grad.shape() != cache.output.shape() {
        return Err(Error::ShapeMismatch {
            layer: nl - 1,
            detail: format!(
                "loss gradient is {:?}, outputs are {:?}",
                loss_grad.shape(),
                cache.output.shape()
            ),
        });
    }

    let mut grads = Gradients::zeros(arch);
    let mut dz = loss_grad.clone();
    if arch.head == HeadKind::PerTaskLinearSigmoid {
        for (d, &s) in dz.data_mut().iter_mut().zip(cache.output.data()) {
            *d *= s * (F::one() - s);
        }
    }

    for l in (0..nl).rev() {
        let lc = &cache.layers[l];
        let dw = Matrix::product(&dz, true, &lc.input, false);
        let mask = view.weights.layers.get(l);
        let gw = &mut grads.weights[l];
        for (i, &r) in lc.active_out.iter().enumerate() {
            let src = dw.row(i);
            let dst = gw.row_mut(r);
            for (k, &c) in lc.active_in.iter().enumerate() {
                if mask.is_none_or(|m| m.get(r, c)) {
                    dst[c] = src[k];
                }
            }
        }
        let gb = &mut grads.biases[l];
        for row in 0..n {
            for (k, &v) in dz.row(row).iter().enumerate() {
                gb[lc.active_out[k]] += v;
            }
        }
        if l == 0 {
            break;
        }

        // into hidden layer `l`
        let mut dh = Matrix::product(&dz, false, &lc.weight, false);
        let below = &cache.layers[l - 1];
        let pre = below.pre_act.as_ref().expect("hidden cache");
        let act = arch.activation;
        for (d, &a) in dh.data_mut().iter_mut().zip(pre.data()) {
            *d *= F::of(act.derivative(a.as_f64()));
        }
        if let (Some(xhat), Some(bnl)) = (below.xhat.as_ref(), bn.hidden(l)) {
            let width = below.active_out.len();
            let mut dgamma = vec![F::zero(); width];
            let mut dbeta = vec![F::zero(); width];
            for r in 0..n {
                let da = dh.row(r);
                let xr = xhat.row(r);
                for k in 0..width {
                    dgamma[k] += da[k] * xr[k];
                    dbeta[k] += da[k];
                }
            }
            let gamma: Vec<F> = below.active_out.iter().map(|&j| bnl.gamma[j]).collect();
            // d xhat = dA * gamma; dZ = inv_std / n * (n dxhat - sum dxhat - xhat * sum(dxhat xhat))
            let mut sum_dx = vec![F::zero(); width];
            let mut sum_dx_x = vec![F::zero(); width];
            for r in 0..n {
                let da = dh.row_mut(r);
                let xr = xhat.row(r);
                for k in 0..width {
                    da[k] *= gamma[k];
                    sum_dx[k] += da[k];
                    sum_dx_x[k] += da[k] * xr[k];
                }
            }
            let nf = F::of(n as f64);
            for r in 0..n {
                let da = dh.row_mut(r);
                let xr = xhat.row(r);
                for k in 0..width {
                    da[k] = below.inv_std[k] / nf * (nf * da[k] - sum_dx[k] - xr[k] * sum_dx_x[k]);
                }
            }
            let (gg, gbeta) = grads.bn[l - 1].as_mut().expect("bn grad slot");
            for (k, &j) in below.active_out.iter().enumerate() {
                gg[j] = dgamma[k];
                gbeta[j] = dbeta[k];
            }
        }
        dz = dh;
    }
    Ok(grads)
}
