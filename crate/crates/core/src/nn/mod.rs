//! Minimal dense network engine: mask-aware forward and manual backward,
//! losses and optimizers.

mod arch;
mod loss;
mod matrix;
mod net;
mod optim;
mod params;
mod scalar;

pub use arch::{Activation, Architecture, HeadKind};
pub use loss::{accuracy, loss, LossKind, Targets};
pub use matrix::Matrix;
pub use net::{backward, forward, predict, ForwardCache, Gradients, Mode, NetView};
pub use optim::{OptState, OptimizerSpec, Trainable};
pub use params::{BnBank, BnLayer, DenseLayer, ParamStore, BN_EPS, BN_MOMENTUM};
pub use scalar::Scalar;

/// Inputs and targets of one mini-batch.
#[derive(Debug, Clone)]
pub struct Batch<F> {
    pub inputs: Matrix<F>,
    pub targets: Targets,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{NeuronMask, WeightMask};

    #[test]
    fn identity_network_passes_input_through() {
        let arch = Architecture::new(vec![2, 2], Activation::Identity, vec![], HeadKind::SharedSoftmax).unwrap();
        let mut params = ParamStore::<f64>::init(&arch, 1);
        params.layers[0].weight = Matrix::from_vec(2, 2, vec![1., 0., 0., 1.]);
        let neurons = NeuronMask::full(&arch);
        let weights = WeightMask::full(&arch);
        let view = NetView {
            arch: &arch,
            params: &params,
            head: None,
            neurons: &neurons,
            weights: &weights,
        };
        let out = predict(&view, &BnBank::new(&arch), &Matrix::from_vec(1, 2, vec![1., 2.])).unwrap();
        assert_eq!(out.data(), &[1., 2.]);
    }

    #[test]
    fn batchnorm_train_mode_uses_population_variance() {
        // one hidden unit, identity activation, pre-BN activations (0, 2)
        let arch = Architecture::new(vec![1, 1, 1], Activation::Identity, vec![true], HeadKind::SharedSoftmax).unwrap();
        let mut params = ParamStore::<f64>::init(&arch, 1);
        params.layers[0].weight = Matrix::from_vec(1, 1, vec![1.0]);
        params.layers[1].weight = Matrix::from_vec(1, 1, vec![1.0]);
        let neurons = NeuronMask::full(&arch);
        let weights = WeightMask::full(&arch);
        let view = NetView {
            arch: &arch,
            params: &params,
            head: None,
            neurons: &neurons,
            weights: &weights,
        };
        let mut bn = BnBank::new(&arch);
        let (out, _) = forward(&view, &mut bn, &Matrix::from_vec(2, 1, vec![0.0, 2.0]), Mode::Train).unwrap();
        let expected = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((out.get(0, 0) + expected).abs() < 1e-12);
        assert!((out.get(1, 0) - expected).abs() < 1e-12);
        // 1 / sqrt(1.00001), evaluated by hand
        assert!((expected - 0.999_995_000_037).abs() < 1e-12);
        let layer = bn.hidden(1).unwrap();
        assert!((layer.running_mean[0] - 0.1).abs() < 1e-12);
        assert!((layer.running_var[0] - (0.9 + 0.1 * 1.0)).abs() < 1e-12);
    }

    #[test]
    fn masked_neuron_isolates_its_weights() {
        let arch = Architecture::mlp(&[3, 4, 2]);
        let mut params = ParamStore::<f32>::init(&arch, 9);
        let mut neurons = NeuronMask::full(&arch);
        neurons.hidden[0].set(2, false);
        let weights = WeightMask::full(&arch);
        let x = Matrix::from_fn(5, 3, |r, c| (r * 3 + c) as f32 * 0.1 - 0.4);
        let run = |params: &ParamStore<f32>| {
            let view = NetView {
                arch: &arch,
                params,
                head: None,
                neurons: &neurons,
                weights: &weights,
            };
            let mut bn = BnBank::new(&arch);
            forward(&view, &mut bn, &x, Mode::Train).unwrap().0
        };
        let base = run(&params);
        for c in 0..3 {
            params.layers[0].weight.set(2, c, 123.0);
        }
        params.layers[0].bias[2] = -7.0;
        params.layers[1].weight.set(0, 2, 55.0);
        params.layers[1].weight.set(1, 2, -55.0);
        assert_eq!(run(&params), base);
    }

    #[test]
    fn empty_batch_and_shape_errors() {
        let arch = Architecture::mlp(&[3, 4, 2]);
        let params = ParamStore::<f32>::init(&arch, 1);
        let neurons = NeuronMask::full(&arch);
        let weights = WeightMask::full(&arch);
        let view = NetView {
            arch: &arch,
            params: &params,
            head: None,
            neurons: &neurons,
            weights: &weights,
        };
        let bn = BnBank::new(&arch);
        assert!(matches!(
            predict(&view, &bn, &Matrix::zeros(0, 3)),
            Err(crate::Error::EmptyBatch)
        ));
        assert!(matches!(
            predict(&view, &bn, &Matrix::zeros(2, 4)),
            Err(crate::Error::ShapeMismatch { layer: 0, .. })
        ));
        let other = WeightMask::full(&Architecture::mlp(&[3, 5, 2]));
        let bad = NetView { weights: &other, ..view };
        assert!(matches!(
            predict(&bad, &bn, &Matrix::zeros(2, 3)),
            Err(crate::Error::ShapeMismatch { layer: 0, .. })
        ));
    }

    #[test]
    fn backward_rejects_eval_cache_and_zero_grad_gives_zero() {
        let arch = Architecture::mlp(&[3, 4, 2]);
        let params = ParamStore::<f64>::init(&arch, 1);
        let neurons = NeuronMask::full(&arch);
        let weights = WeightMask::full(&arch);
        let view = NetView {
            arch: &arch,
            params: &params,
            head: None,
            neurons: &neurons,
            weights: &weights,
        };
        let mut bn = BnBank::new(&arch);
        let x = Matrix::from_fn(4, 3, |r, c| (r as f64 - c as f64) * 0.3);
        let (out, cache) = forward(&view, &mut bn, &x, Mode::Eval).unwrap();
        assert!(matches!(
            backward(&view, &bn, &cache, &Matrix::zeros(out.rows(), out.cols())),
            Err(crate::Error::EvalCache)
        ));
        let (out, cache) = forward(&view, &mut bn, &x, Mode::Train).unwrap();
        let g = backward(&view, &bn, &cache, &Matrix::zeros(out.rows(), out.cols())).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn single_linear_layer_squared_loss_gradient() {
        let arch = Architecture::new(vec![3, 1], Activation::Identity, vec![], HeadKind::SharedSoftmax).unwrap();
        let mut params = ParamStore::<f64>::init(&arch, 1);
        params.layers[0].weight = Matrix::from_vec(1, 3, vec![0.5, -1.0, 2.0]);
        let neurons = NeuronMask::full(&arch);
        let mut weights = WeightMask::full(&arch);
        weights.layers[0].set(0, 1, false);
        let view = NetView {
            arch: &arch,
            params: &params,
            head: None,
            neurons: &neurons,
            weights: &weights,
        };
        let mut bn = BnBank::new(&arch);
        let x = [1.0, 2.0, 3.0];
        let y = 1.0;
        let (out, cache) = forward(&view, &mut bn, &Matrix::from_vec(1, 3, x.to_vec()), Mode::Train).unwrap();
        let y_hat = 0.5 * 1.0 + 2.0 * 3.0;
        assert_eq!(out.get(0, 0), y_hat);
        let (_, lg) = loss(&out, &Targets::Values(vec![y as f32]), LossKind::Squared).unwrap();
        let g = backward(&view, &bn, &cache, &lg).unwrap();
        let expect = |c: usize| if c == 1 { 0.0 } else { 2.0 * (y_hat - y) * x[c] };
        for c in 0..3 {
            assert!((g.weights[0].get(0, c) - expect(c)).abs() < 1e-12);
        }
    }
}
