//! Per-task training: pre-train, gradual prune, fine-tune, commit. Also the
//! PackNet and from-scratch baselines and task-routed inference.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flops::{max_flops, total_flops, FlopReport};
use crate::mask::{BitSet, NeuronMask, SupernetState, TaskId, WeightMask};
use crate::nn::{
    accuracy, backward, forward, loss, predict, Architecture, BnBank, DenseLayer, HeadKind, LossKind, Matrix, Mode,
    NetView, OptState, OptimizerSpec, Targets, Trainable,
};
use crate::pruning::{
    lambda_weights, penalty_grad, prune_neurons_to_flops, prune_weights, schedule_targets, uniform_weights, Budget,
    FrozenReuse, PenaltyKind, PruneConfig,
};
use crate::rng::{derive_seed, stream, Purpose};
use crate::tasks::TaskDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Espn,
    Packnet,
    Individual,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Espn => "espn",
            Method::Packnet => "packnet",
            Method::Individual => "individual",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "espn" => Ok(Method::Espn),
            "packnet" => Ok(Method::Packnet),
            "individual" => Ok(Method::Individual),
            _ => Err(Error::InvalidConfig(format!("unknown method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Cosine decay over the fine-tuning phase.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Epochs {
    pub pre: usize,
    pub prune: usize,
    pub fine: usize,
}

impl Epochs {
    pub fn total(&self) -> usize {
        self.pre + self.prune + self.fine
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub method: Method,
    pub prune: PruneConfig,
    pub epochs: Epochs,
    pub optimizer: OptimizerSpec,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub batch_size: usize,
    pub seed: u64,
    /// Recompute the task's batch-norm running statistics over its training
    /// set on the final subnetwork before committing.
    pub recalibrate_bn: bool,
}

impl Default for TrainConfig {
    /// FC1024 MNIST settings: RMSprop, lr 0.001, batch 256, epochs (3, 4, 3).
    fn default() -> Self {
        Self {
            method: Method::Espn,
            prune: PruneConfig::default(),
            epochs: Epochs { pre: 3, prune: 4, fine: 3 },
            optimizer: OptimizerSpec::rmsprop(),
            lr: 1e-3,
            lr_schedule: LrSchedule::Constant,
            batch_size: 256,
            seed: 0,
            recalibrate_bn: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.prune.validate()?;
        if self.epochs.prune == 0 {
            return Err(Error::InvalidConfig("at least one pruning epoch is required".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Prune,
    Finetune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub phase: Phase,
    pub epoch: usize,
    pub train_loss: f64,
    pub flop_fraction: f64,
    pub mask_nnz: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: TaskId,
    pub method: Method,
    pub budget: Budget,
    /// Weights newly claimed from the free set.
    pub new_nnz: u64,
    /// Frozen weights of earlier tasks reused.
    pub shared_nnz: u64,
    pub flops: FlopReport,
    /// Fraction of hidden neurons kept.
    pub neuron_fraction: f64,
    /// Accuracy in percent for classification, mean squared error for regression.
    pub train_metric: f64,
    pub test_metric: f64,
    pub trace: Vec<EpochTrace>,
    pub wall_ms: u64,
}

fn loss_kind(arch: &Architecture) -> LossKind {
    match arch.head {
        HeadKind::SharedSoftmax => LossKind::SoftmaxXent,
        HeadKind::PerTaskLinearSigmoid => LossKind::Squared,
    }
}

/// Accuracy (percent) or mean squared error of `outputs` against `targets`.
pub fn score(outputs: &Matrix<f32>, targets: &Targets) -> Result<f64> {
    match targets {
        Targets::Classes(c) => Ok(100.0 * accuracy(outputs, c)),
        Targets::Values(_) => Ok(loss(outputs, targets, LossKind::Squared)?.0),
    }
}

const EVAL_CHUNK: usize = 2048;

fn evaluate(view: &NetView<'_, f32>, bn: &BnBank<f32>, inputs: &Matrix<f32>, targets: &Targets) -> Result<f64> {
    let out = predict_chunked(view, bn, inputs)?;
    score(&out, targets)
}

fn predict_chunked(view: &NetView<'_, f32>, bn: &BnBank<f32>, inputs: &Matrix<f32>) -> Result<Matrix<f32>> {
    if inputs.rows() <= EVAL_CHUNK {
        return predict(view, bn, inputs);
    }
    let mut data = Vec::with_capacity(inputs.rows() * view.arch.output_dim());
    for start in (0..inputs.rows()).step_by(EVAL_CHUNK) {
        let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(inputs.rows())).collect();
        data.extend(predict(view, bn, &inputs.gather_rows(&idx))?.into_vec());
    }
    Ok(Matrix::from_vec(inputs.rows(), view.arch.output_dim(), data))
}

/// Eval-mode outputs of a committed task.
pub fn infer(state: &SupernetState, task_id: TaskId, inputs: &Matrix<f32>) -> Result<Matrix<f32>> {
    let (view, bn) = state.view(task_id)?;
    predict_chunked(&view, bn, inputs)
}

/// Test metric of a committed task.
pub fn evaluate_task(state: &SupernetState, task_id: TaskId, inputs: &Matrix<f32>, targets: &Targets) -> Result<f64> {
    let (view, bn) = state.view(task_id)?;
    evaluate(&view, bn, inputs, targets)
}

/// What one task may change.
fn trainable(state: &SupernetState, neurons: &NeuronMask, weights: &WeightMask, train_bn: bool) -> Result<Trainable> {
    let arch = &state.arch;
    let private_head = arch.head == HeadKind::PerTaskLinearSigmoid;
    let biases = (0..arch.num_layers())
        .map(|l| {
            if l >= arch.maskable_layers() {
                BitSet::ones(arch.layer_dims[l + 1])
            } else {
                BitSet::from_fn(arch.layer_dims[l + 1], |j| neurons.is_active(arch, l + 1, j))
                    .difference(&state.frozen_biases[l])
            }
        })
        .collect();
    let bn = (1..=arch.hidden_layers())
        .map(|h| {
            if train_bn && arch.has_batchnorm(h) {
                neurons.hidden[h - 1].clone()
            } else {
                BitSet::zeros(arch.layer_dims[h])
            }
        })
        .collect();
    Ok(Trainable {
        weights: weights.intersect(&state.free)?,
        head: private_head,
        biases,
        bn,
    })
}

const RECAL_CHUNK: usize = 10_000;

struct Penalty {
    strength: f32,
    lambda: Vec<f64>,
}

struct Run<'a> {
    state: &'a mut SupernetState,
    data: &'a TaskDataset,
    cfg: &'a TrainConfig,
    bn: BnBank<f32>,
    opt: OptState<f32>,
    shuffle: crate::rng::StreamRng,
    kind: LossKind,
}

impl Run<'_> {
    /// One pass over the training set; returns the mean training loss.
    fn epoch(
        &mut self,
        neurons: &NeuronMask,
        weights: &WeightMask,
        trainable: &Trainable,
        penalty: Option<&Penalty>,
        lr: &mut dyn FnMut() -> f64,
    ) -> Result<f64> {
        let n = self.data.n_train();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.shuffle);
        let bs = self.cfg.batch_size.min(n);
        let mut total = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(bs) {
            // a single-sample batch carries no batch statistics
            if chunk.len() < 2 && n >= 2 {
                continue;
            }
            let x = self.data.train.inputs.gather_rows(chunk);
            let y = self.data.train.targets.gather(chunk);
            let mut grads = {
                let view = NetView {
                    arch: &self.state.arch,
                    params: &self.state.params,
                    head: None,
                    neurons,
                    weights,
                };
                let (out, cache) = forward(&view, &mut self.bn, &x, Mode::Train)?;
                let (l, lg) = loss(&out, &y, self.kind)?;
                total += l * chunk.len() as f64;
                seen += chunk.len();
                backward(&view, &self.bn, &cache, &lg)?
            };
            if let Some(p) = penalty {
                let scores: Vec<&[f32]> = (1..=self.state.arch.hidden_layers())
                    .map(|h| self.bn.hidden(h).map_or(&[][..], |b| &b.gamma[..]))
                    .collect();
                let pg = penalty_grad(&scores, &p.lambda, neurons);
                for (h, g) in pg.into_iter().enumerate() {
                    if let Some((dgamma, _)) = grads.bn[h].as_mut() {
                        for (a, b) in dgamma.iter_mut().zip(g) {
                            *a += p.strength * b;
                        }
                    }
                }
            }
            let lr = lr();
            self.opt.step(&mut self.state.params, Some(&mut self.bn), &grads, trainable, lr)?;
        }
        if !total.is_finite() {
            return Err(Error::Diverged(format!("training loss is {total}")));
        }
        Ok(if seen == 0 { 0.0 } else { total / seen as f64 })
    }

    /// Replaces the running statistics with those of the whole training set
    /// under the final masks. Sets larger than `RECAL_CHUNK` are pooled over
    /// chunks, later layers then seeing chunk-normalized inputs.
    fn recalibrate_bn(&mut self, neurons: &NeuronMask, weights: &WeightMask) -> Result<()> {
        let n = self.data.n_train();
        if n < 2 {
            return Ok(());
        }
        let hidden = self.state.arch.hidden_layers();
        let widths: Vec<usize> = (1..=hidden).map(|h| self.state.arch.layer_dims[h]).collect();
        let mut sum: Vec<Vec<f64>> = widths.iter().map(|&w| vec![0.0; w]).collect();
        let mut sq: Vec<Vec<f64>> = sum.clone();
        let momentum = self.bn.momentum;
        self.bn.momentum = 1.0;
        let view = NetView {
            arch: &self.state.arch,
            params: &self.state.params,
            head: None,
            neurons,
            weights,
        };
        let idx: Vec<usize> = (0..n).collect();
        let chunks = n.div_ceil(RECAL_CHUNK);
        let size = n.div_ceil(chunks);
        for chunk in idx.chunks(size) {
            let x = self.data.train.inputs.gather_rows(chunk);
            forward(&view, &mut self.bn, &x, Mode::Train)?;
            let w = chunk.len() as f64;
            for h in 1..=hidden {
                if let Some(b) = self.bn.hidden(h) {
                    for j in neurons.hidden[h - 1].iter_ones() {
                        let (m, v) = (b.running_mean[j] as f64, b.running_var[j] as f64);
                        sum[h - 1][j] += w * m;
                        sq[h - 1][j] += w * (v + m * m);
                    }
                }
            }
        }
        self.bn.momentum = momentum;
        for h in 1..=hidden {
            if let Some(b) = self.bn.hidden_mut(h) {
                for j in neurons.hidden[h - 1].iter_ones() {
                    let m = sum[h - 1][j] / n as f64;
                    b.running_mean[j] = m as f32;
                    b.running_var[j] = (sq[h - 1][j] / n as f64 - m * m).max(0.0) as f32;
                }
            }
        }
        Ok(())
    }

    fn scores(&self) -> Vec<Option<&[f32]>> {
        (1..=self.state.arch.hidden_layers())
            .map(|h| self.bn.hidden(h).map(|b| &b.gamma[..]))
            .collect()
    }
}

fn fresh_head(arch: &Architecture, seed: u64, task_id: TaskId) -> DenseLayer<f32> {
    let (o, i) = arch.weight_shape(arch.num_layers() - 1);
    DenseLayer::init(o, i, &mut stream(seed, task_id.into(), Purpose::Head))
}

fn penalty_for(arch: &Architecture, neurons: &NeuronMask, cfg: &PruneConfig) -> Result<Option<Penalty>> {
    let lambda = match cfg.penalty {
        PenaltyKind::None => return Ok(None),
        PenaltyKind::FlopAware => lambda_weights(arch, neurons)?,
        PenaltyKind::L1Uniform => uniform_weights(arch),
    };
    Ok(Some(Penalty {
        strength: cfg.penalty_strength as f32,
        lambda,
    }))
}

/// Trains one task and commits it.
fn learn_task(state: &mut SupernetState, data: &TaskDataset, cfg: &TrainConfig, packnet: bool) -> Result<TaskResult> {
    cfg.validate()?;
    let started = Instant::now();
    let task_id = data.task_id;
    if state.tasks.contains_key(&task_id) {
        return Err(Error::DuplicateTask(task_id));
    }
    if data.n_train() == 0 {
        return Err(Error::EmptyDataset(task_id));
    }
    let arch = state.arch.clone();
    let gamma = if packnet { 1.0 } else { cfg.prune.gamma };
    let budget = Budget::for_task(&arch, gamma, cfg.prune.alpha, state.used)?;
    let reuse = if packnet { FrozenReuse::All } else { FrozenReuse::Threshold };

    if arch.head == HeadKind::PerTaskLinearSigmoid {
        let l = arch.num_layers() - 1;
        state.params.layers[l] = fresh_head(&arch, cfg.seed, task_id);
    }

    let mut run = Run {
        bn: BnBank::new(&arch),
        opt: OptState::new(cfg.optimizer, &arch),
        shuffle: stream(cfg.seed, task_id.into(), Purpose::Shuffle),
        kind: loss_kind(&arch),
        state,
        data,
        cfg,
    };
    let train_bn = !packnet;
    let mut trace = Vec::new();
    let lr0 = cfg.lr;

    // pre-train: every neuron, every weight in the forward pass
    let mut neurons = NeuronMask::full(&arch);
    let mut weights = WeightMask::full(&arch);
    let t = trainable(run.state, &neurons, &weights, train_bn)?;
    for e in 0..cfg.epochs.pre {
        let l = run.epoch(&neurons, &weights, &t, None, &mut || lr0)?;
        trace.push(EpochTrace {
            phase: Phase::Pretrain,
            epoch: e,
            train_loss: l,
            flop_fraction: 1.0,
            mask_nnz: weights.popcount(),
        });
    }

    // gradual pruning
    let start_flops = max_flops(&arch);
    let start_nnz = run.state.free_count();
    let prunes_neurons = !packnet && budget.target_flops < start_flops;
    for e in 1..=cfg.epochs.prune {
        let penalty = if prunes_neurons {
            penalty_for(&arch, &neurons, &cfg.prune)?
        } else {
            None
        };
        let t = trainable(run.state, &neurons, &weights, train_bn)?;
        let l = run.epoch(&neurons, &weights, &t, penalty.as_ref(), &mut || lr0)?;
        let (flops_e, nnz_e) = schedule_targets(e, cfg.epochs.prune, start_flops, budget, start_nnz, cfg.prune.schedule);
        if prunes_neurons {
            neurons = prune_neurons_to_flops(&arch, &run.scores(), &neurons, flops_e)?;
        }
        weights = prune_weights(
            &arch,
            &run.state.params,
            &run.state.free,
            &run.state.cumulative,
            &neurons,
            nnz_e,
            reuse,
        )?;
        trace.push(EpochTrace {
            phase: Phase::Prune,
            epoch: e - 1,
            train_loss: l,
            flop_fraction: total_flops(&arch, &neurons).fraction,
            mask_nnz: weights.popcount(),
        });
    }

    // fine-tune on the final mask
    let t = trainable(run.state, &neurons, &weights, train_bn)?;
    let steps_per_epoch = {
        let n = data.n_train();
        let bs = cfg.batch_size.min(n).max(1);
        n.div_ceil(bs)
    };
    let total_steps = (steps_per_epoch * cfg.epochs.fine).max(1);
    let mut step = 0usize;
    for e in 0..cfg.epochs.fine {
        let mut lr_fn = || {
            let lr = match cfg.lr_schedule {
                LrSchedule::Constant => lr0,
                LrSchedule::Cosine => {
                    let s = step.min(total_steps - 1) as f64 / total_steps as f64;
                    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * s).cos())
                }
            };
            step += 1;
            lr
        };
        let l = run.epoch(&neurons, &weights, &t, None, &mut lr_fn)?;
        trace.push(EpochTrace {
            phase: Phase::Finetune,
            epoch: e,
            train_loss: l,
            flop_fraction: total_flops(&arch, &neurons).fraction,
            mask_nnz: weights.popcount(),
        });
    }

    if cfg.recalibrate_bn {
        run.recalibrate_bn(&neurons, &weights)?;
    }
    let bn = run.bn;
    let flops = total_flops(&arch, &neurons);
    let shared_nnz = weights.intersect(&state.cumulative)?.popcount();
    let head = match arch.head {
        HeadKind::PerTaskLinearSigmoid => Some(state.params.layers[arch.num_layers() - 1].clone()),
        HeadKind::SharedSoftmax => None,
    };
    let neuron_fraction = neurons.total_active_hidden() as f64 / arch.layer_dims[1..arch.num_layers()].iter().sum::<usize>() as f64;
    state.commit_task(task_id, neurons, weights, bn, head)?;
    let new_nnz = state.task(task_id)?.new_nnz;

    if flops.total > budget.target_flops {
        return Err(Error::ConstraintViolated(format!(
            "task {task_id}: {} MACs exceed the budget of {}",
            flops.total, budget.target_flops
        )));
    }
    if new_nnz > budget.target_new_nnz {
        return Err(Error::ConstraintViolated(format!(
            "task {task_id}: {new_nnz} new weights exceed the budget of {}",
            budget.target_new_nnz
        )));
    }

    let train_metric = evaluate_task(state, task_id, &data.train.inputs, &data.train.targets)?;
    let test_metric = evaluate_task(state, task_id, &data.test.inputs, &data.test.targets)?;
    Ok(TaskResult {
        task_id,
        method: if packnet { Method::Packnet } else { cfg.method },
        budget,
        new_nnz,
        shared_nnz,
        flops,
        neuron_fraction,
        train_metric,
        test_metric,
        trace,
        wall_ms: started.elapsed().as_millis() as u64,
    })
}

/// FLOP-budgeted sparse subnetwork for one task; commits it to `state`.
pub fn learn_task_espn(state: &mut SupernetState, data: &TaskDataset, cfg: &TrainConfig) -> Result<TaskResult> {
    learn_task(state, data, cfg, false)
}

/// PackNet baseline: no neuron pruning, batch-norm affine fixed at (1, 0)
/// with per-task running statistics, all frozen weights reused.
pub fn learn_task_packnet(state: &mut SupernetState, data: &TaskDataset, cfg: &TrainConfig) -> Result<TaskResult> {
    learn_task(state, data, cfg, true)
}

/// Seed of the fresh supernet used by the from-scratch baseline for a task.
pub fn individual_seed(run_seed: u64, task_id: TaskId) -> u64 {
    derive_seed(run_seed, task_id.into(), Purpose::Init)
}

/// From-scratch baseline: a fresh supernet for this task alone, `α = 1`.
pub fn learn_individual(arch: &Architecture, data: &TaskDataset, cfg: &TrainConfig) -> Result<TaskResult> {
    let mut state = SupernetState::new(arch.clone(), individual_seed(cfg.seed, data.task_id))?;
    let mut cfg = cfg.clone();
    cfg.prune.alpha = 1.0;
    let mut r = learn_task(&mut state, data, &cfg, false)?;
    r.method = Method::Individual;
    Ok(r)
}

/// Dispatches on `cfg.method`. Individual runs leave `state` untouched.
pub fn learn_task_with(state: &mut SupernetState, data: &TaskDataset, cfg: &TrainConfig) -> Result<TaskResult> {
    match cfg.method {
        Method::Espn => learn_task_espn(state, data, cfg),
        Method::Packnet => learn_task_packnet(state, data, cfg),
        Method::Individual => learn_individual(&state.arch, data, cfg),
    }
}
