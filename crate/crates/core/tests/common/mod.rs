#![allow(dead_code)]

use espn::harness::MetricRow;
use espn::mask::{NeuronMask, WeightMask};
use espn::nn::{
    backward, forward, loss, Activation, Architecture, Batch, BnBank, HeadKind, LossKind, Matrix, Mode, NetView,
    ParamStore, Targets,
};
use espn::rng::{stream, Purpose};
use espn::tasks::{TaskDataset, TaskKind, TaskMeta};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal(rng: &mut espn::rng::StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

/// Gaussian blobs: one random center per class, shifted per task so tasks differ.
pub fn blobs_task(task_id: u32, dim: usize, classes: u32, n_train: usize, n_test: usize, seed: u64) -> TaskDataset {
    let mut rng = stream(seed, task_id as u64, Purpose::Planted);
    let centers: Vec<Vec<f32>> = (0..classes)
        .map(|_| (0..dim).map(|_| 2.0 * normal(&mut rng) as f32).collect())
        .collect();
    let mut draw = |n: usize| {
        let mut x = Vec::with_capacity(n * dim);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let c = (i as u32) % classes;
            for d in 0..dim {
                let z = normal(&mut rng);
                x.push(centers[c as usize][d] + z as f32);
            }
            y.push(c);
        }
        Batch {
            inputs: Matrix::from_vec(n, dim, x),
            targets: Targets::Classes(y),
        }
    };
    let train = draw(n_train);
    let test = draw(n_test);
    TaskDataset {
        task_id,
        kind: TaskKind::Classification { classes },
        train,
        test,
        meta: TaskMeta::Base,
        train_fraction: 1.0,
    }
}

/// Small batch-norm MLP used by the toy constraint and checkpoint tests.
pub fn toy_arch() -> Architecture {
    Architecture::mlp(&[16, 24, 24, 4])
}

/// Outcome of one finite-difference comparison.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub rel_error: f64,
    pub params: usize,
    pub describe: String,
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Central-difference check of `backward` on a random tiny network in f64,
/// train mode, with random neuron and weight masks. Returns
/// `‖g − ĝ‖ / (‖g‖ + ‖ĝ‖)` over every weight, bias and batch-norm affine entry.
pub fn gradcheck_random(seed: u64) -> GradCheck {
    let mut rng = stream(seed, 0, Purpose::Init);
    let depth = rng.gen_range(2..=4usize);
    let regression = rng.gen_bool(0.25);
    let mut dims = vec![rng.gen_range(2..=5usize)];
    for _ in 1..depth {
        dims.push(rng.gen_range(2..=6usize));
    }
    dims.push(if regression { 1 } else { rng.gen_range(2..=4usize) });
    let activation = match rng.gen_range(0..3) {
        0 => Activation::Relu,
        1 => Activation::LeakyRelu(0.1),
        _ => Activation::Identity,
    };
    let hidden = depth - 1;
    let mut batchnorm: Vec<bool> = (0..hidden).map(|_| rng.gen_bool(0.7)).collect();
    batchnorm[0] = true;
    let head = if regression { HeadKind::PerTaskLinearSigmoid } else { HeadKind::SharedSoftmax };
    let arch = Architecture::new(dims.clone(), activation, batchnorm.clone(), head).unwrap();

    let mut params = ParamStore::<f32>::init(&arch, seed).cast::<f64>();
    for layer in &mut params.layers {
        for b in &mut layer.bias {
            *b = rng.gen_range(-0.5..0.5);
        }
    }
    let mut bn = BnBank::<f64>::new(&arch);
    for layer in bn.layers.iter_mut().flatten() {
        for g in &mut layer.gamma {
            *g = rng.gen_range(0.5..1.5);
        }
        for b in &mut layer.beta {
            *b = rng.gen_range(-0.5..0.5);
        }
    }

    let mut neurons = NeuronMask::full(&arch);
    for bits in &mut neurons.hidden {
        let keep = rng.gen_range(0..bits.len());
        for j in 0..bits.len() {
            if j != keep && rng.gen_bool(0.2) {
                bits.set(j, false);
            }
        }
    }
    let mut weights = WeightMask::region(&arch, &neurons);
    for layer in &mut weights.layers {
        for r in 0..layer.rows() {
            for c in 0..layer.cols() {
                if layer.get(r, c) && rng.gen_bool(0.15) {
                    layer.set(r, c, false);
                }
            }
        }
    }
    // a private head lives outside the maskable layers
    let head_layer = regression.then(|| params.layers.last().unwrap().clone());

    let batch = rng.gen_range(3..=8usize);
    let x = Matrix::from_fn(batch, dims[0], |_, _| normal(&mut rng));
    let (targets, kind) = if regression {
        (Targets::Values((0..batch).map(|_| rng.gen_range(0.0..1.0)).collect()), LossKind::Squared)
    } else {
        let k = *dims.last().unwrap() as u32;
        (Targets::Classes((0..batch).map(|_| rng.gen_range(0..k)).collect()), LossKind::SoftmaxXent)
    };

    let eval = |params: &ParamStore<f64>, head: Option<&espn::nn::DenseLayer<f64>>, bn: &BnBank<f64>| -> f64 {
        let view = NetView {
            arch: &arch,
            params,
            head,
            neurons: &neurons,
            weights: &weights,
        };
        let mut bn = bn.clone();
        let (out, _) = forward(&view, &mut bn, &x, Mode::Train).unwrap();
        loss(&out, &targets, kind).unwrap().0
    };

    let view = NetView {
        arch: &arch,
        params: &params,
        head: head_layer.as_ref(),
        neurons: &neurons,
        weights: &weights,
    };
    let mut bn_run = bn.clone();
    let (out, cache) = forward(&view, &mut bn_run, &x, Mode::Train).unwrap();
    let (_, dl) = loss(&out, &targets, kind).unwrap();
    let grads = backward(&view, &bn, &cache, &dl).unwrap();

    let h = 1e-6;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let last = arch.num_layers() - 1;
    for l in 0..arch.num_layers() {
        let (o, i) = arch.weight_shape(l);
        let on_head = regression && l == last;
        for r in 0..o {
            for c in 0..i {
                let bump = |d: f64| {
                    let mut p = params.clone();
                    let mut hl = head_layer.clone();
                    match (&mut hl, on_head) {
                        (Some(hd), true) => hd.weight.set(r, c, hd.weight.get(r, c) + d),
                        _ => {
                            let w = &mut p.layers[l].weight;
                            w.set(r, c, w.get(r, c) + d);
                        }
                    }
                    eval(&p, hl.as_ref(), &bn)
                };
                analytic.push(grads.weights[l].get(r, c));
                numeric.push((bump(h) - bump(-h)) / (2.0 * h));
            }
            let bump = |d: f64| {
                let mut p = params.clone();
                let mut hl = head_layer.clone();
                match (&mut hl, on_head) {
                    (Some(hd), true) => hd.bias[r] += d,
                    _ => p.layers[l].bias[r] += d,
                }
                eval(&p, hl.as_ref(), &bn)
            };
            analytic.push(grads.biases[l][r]);
            numeric.push((bump(h) - bump(-h)) / (2.0 * h));
        }
    }
    for hdx in 1..=arch.hidden_layers() {
        let Some((dg, db)) = &grads.bn[hdx - 1] else { continue };
        for j in 0..dims[hdx] {
            for (which, g) in [(0, dg[j]), (1, db[j])] {
                let bump = |d: f64| {
                    let mut b = bn.clone();
                    let layer = b.hidden_mut(hdx).unwrap();
                    if which == 0 {
                        layer.gamma[j] += d;
                    } else {
                        layer.beta[j] += d;
                    }
                    eval(&params, head_layer.as_ref(), &b)
                };
                analytic.push(g);
                numeric.push((bump(h) - bump(-h)) / (2.0 * h));
            }
        }
    }
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
    let denom = (l2(&analytic) + l2(&numeric)).max(1e-12);
    GradCheck {
        rel_error: l2(&diff) / denom,
        params: analytic.len(),
        describe: format!("dims {dims:?} {activation:?} bn {batchnorm:?} batch {batch}"),
    }
}

/// The rows serialized in `tests/golden/metrics.csv`.
pub fn golden_rows() -> Vec<MetricRow> {
    vec![
        MetricRow {
            experiment: "cl_run".into(),
            trial_seed: 1,
            task_id: 3,
            checkpoint_id: 5,
            method: "espn".into(),
            gamma: 0.2,
            alpha: 0.05,
            n_train: 8000,
            accuracy_or_risk: 97.25,
            flop_fraction: 0.1875,
            new_nnz: 93082,
            shared_nnz: 1024,
            wall_ms: 15020,
        },
        MetricRow {
            experiment: "planted_scaling".into(),
            trial_seed: 4,
            task_id: 0,
            checkpoint_id: 4,
            method: "erm".into(),
            gamma: 1.0,
            alpha: 1.0,
            n_train: 1600,
            accuracy_or_risk: 0.000375,
            flop_fraction: 1.0,
            new_nnz: 0,
            shared_nnz: 0,
            wall_ms: 812,
        },
        MetricRow {
            experiment: "task_order".into(),
            trial_seed: 2,
            task_id: 20,
            checkpoint_id: 20,
            method: "espn:increasing, \"quoted\"".into(),
            gamma: 0.2,
            alpha: 0.05,
            n_train: 125,
            accuracy_or_risk: 88.5,
            flop_fraction: 0.2,
            new_nnz: 7,
            shared_nnz: 0,
            wall_ms: 0,
        },
    ]
}
