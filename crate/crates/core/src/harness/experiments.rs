use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use super::checkpoint::save_checkpoint_with;
use super::metrics::{write_csv, MetricRow};
use super::plot::{line_plot, Series};
use super::{family_specs, ExperimentConfig, ExperimentKind, Family, TaskFactory, TaskSource, TaskSpec};
use crate::engine::{evaluate_task, infer, learn_individual, learn_task_with, Method, TaskResult, TrainConfig};
use crate::error::{Error, Result};
use crate::flops::total_flops;
use crate::mask::{SupernetState, TaskId};
use crate::nn::{Architecture, Matrix, Targets};
use crate::pruning::PenaltyKind;
use crate::tasks::{sample_schedule, MnistSplits, PlantedConfig, PlantedModel};
use crate::theory::{estimate_mismatch, excess_risk_sweep, fit_scaling_exponent, median_by_n, MismatchEstimate, ScalingFit, SweepPoint};

/// Ids given to probe tasks so they never collide with continual-learning ids.
pub const PROBE_ID_BASE: TaskId = 1000;

/// Zero-drift check of committed tasks across later checkpoints.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ForgettingAudit {
    /// (task, later checkpoint) pairs compared.
    pub comparisons: usize,
    pub logit_mismatches: usize,
    pub accuracy_mismatches: usize,
}

impl ForgettingAudit {
    pub fn is_clean(&self) -> bool {
        self.logit_mismatches == 0 && self.accuracy_mismatches == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeResult {
    /// Number of continual-learning tasks committed before the probe.
    pub checkpoint: usize,
    pub task_id: TaskId,
    pub n_train: usize,
    pub accuracy: f64,
    pub flop_fraction: f64,
    pub new_nnz: u64,
    pub shared_nnz: u64,
}

/// One trial of a task sequence.
#[derive(Debug, Clone)]
pub struct SequenceRun {
    pub seed: u64,
    pub specs: Vec<TaskSpec>,
    /// In training order.
    pub results: Vec<TaskResult>,
    pub n_train: Vec<usize>,
    pub rows: Vec<MetricRow>,
    pub audit: ForgettingAudit,
    pub probes: Vec<ProbeResult>,
    pub state: SupernetState,
}

impl SequenceRun {
    /// Each task's test metric right after its own training, in training order.
    pub fn accuracies(&self) -> Vec<f64> {
        self.results.iter().map(|r| r.test_metric).collect()
    }

    pub fn mean_accuracy(&self) -> f64 {
        mean(&self.accuracies())
    }

    /// Mean probe accuracy at each checkpoint, ascending.
    pub fn probe_curve(&self) -> Vec<(usize, f64)> {
        let mut cps: Vec<usize> = self.probes.iter().map(|p| p.checkpoint).collect();
        cps.dedup();
        cps.into_iter()
            .map(|c| {
                let v: Vec<f64> = self.probes.iter().filter(|p| p.checkpoint == c).map(|p| p.accuracy).collect();
                (c, mean(&v))
            })
            .collect()
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn effective_gamma_alpha(train: &TrainConfig) -> (f64, f64) {
    match train.method {
        Method::Espn => (train.prune.gamma, train.prune.alpha),
        Method::Packnet => (1.0, train.prune.alpha),
        Method::Individual => (train.prune.gamma, 1.0),
    }
}

/// Fixed parts of a trial.
pub struct SequenceSetup<'a> {
    pub arch: &'a Architecture,
    pub factory: &'a TaskFactory<'a>,
    pub train: &'a TrainConfig,
    pub experiment: &'a str,
    /// Written to the method column; defaults to the method name.
    pub label: Option<&'a str>,
    pub audit_rows: usize,
}

struct Held {
    task_id: TaskId,
    inputs: Matrix<f32>,
    targets: Targets,
    audit_logits: Matrix<f32>,
    accuracy: f64,
    n_train: usize,
    new_nnz: u64,
    shared_nnz: u64,
}

fn same_bits(a: &Matrix<f32>, b: &Matrix<f32>) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Trains `specs` in order on one supernet seeded with `train.seed`. After
/// every commit each earlier task is re-evaluated (accuracy row plus a
/// bit-level logit comparison). At each checkpoint listed in `probe_at`
/// (number of committed tasks, 0 included) every probe task is trained on a
/// copy of the state, which is then discarded.
pub fn run_sequence(setup: &SequenceSetup<'_>, specs: &[TaskSpec], probes: &[TaskSpec], probe_at: &[usize]) -> Result<SequenceRun> {
    let train = setup.train;
    let seed = train.seed;
    let label = setup.label.unwrap_or(train.method.name()).to_string();
    let (gamma, alpha) = effective_gamma_alpha(train);
    let mut state = SupernetState::new(setup.arch.clone(), seed)?;
    let probe_data = probes.iter().map(|p| setup.factory.build(p)).collect::<Result<Vec<_>>>()?;
    let mut run = SequenceRun {
        seed,
        specs: specs.to_vec(),
        results: Vec::new(),
        n_train: Vec::new(),
        rows: Vec::new(),
        audit: ForgettingAudit::default(),
        probes: Vec::new(),
        state: state.clone(),
    };
    let mut held: Vec<Held> = Vec::new();
    let row = |task_id, checkpoint: usize, n_train, acc, ff, new_nnz, shared_nnz, wall_ms| MetricRow {
        experiment: setup.experiment.to_string(),
        trial_seed: seed,
        task_id,
        checkpoint_id: checkpoint as u32,
        method: label.clone(),
        gamma,
        alpha,
        n_train,
        accuracy_or_risk: acc,
        flop_fraction: ff,
        new_nnz,
        shared_nnz,
        wall_ms,
    };

    let probe = |k: usize, state: &SupernetState, run: &mut SequenceRun| -> Result<()> {
        if !probe_at.contains(&k) {
            return Ok(());
        }
        for ds in &probe_data {
            let mut copy = state.clone();
            let r = learn_task_with(&mut copy, ds, train)?;
            run.rows.push(row(
                ds.task_id,
                k,
                ds.n_train(),
                r.test_metric,
                r.flops.fraction,
                r.new_nnz,
                r.shared_nnz,
                r.wall_ms,
            ));
            run.probes.push(ProbeResult {
                checkpoint: k,
                task_id: ds.task_id,
                n_train: ds.n_train(),
                accuracy: r.test_metric,
                flop_fraction: r.flops.fraction,
                new_nnz: r.new_nnz,
                shared_nnz: r.shared_nnz,
            });
        }
        Ok(())
    };

    probe(0, &state, &mut run)?;
    for (i, spec) in specs.iter().enumerate() {
        let k = i + 1;
        let ds = setup.factory.build(spec)?;
        let r = learn_task_with(&mut state, &ds, train)?;
        run.rows.push(row(
            ds.task_id,
            k,
            ds.n_train(),
            r.test_metric,
            r.flops.fraction,
            r.new_nnz,
            r.shared_nnz,
            r.wall_ms,
        ));
        if train.method != Method::Individual {
            for h in &held {
                let started = Instant::now();
                let logits = infer(&state, h.task_id, &h.audit_logits_inputs(setup.audit_rows))?;
                let acc = evaluate_task(&state, h.task_id, &h.inputs, &h.targets)?;
                run.audit.comparisons += 1;
                if !same_bits(&logits, &h.audit_logits) {
                    run.audit.logit_mismatches += 1;
                }
                if acc.to_bits() != h.accuracy.to_bits() {
                    run.audit.accuracy_mismatches += 1;
                }
                let ff = total_flops(&state.arch, &state.task(h.task_id)?.neurons).fraction;
                run.rows.push(row(
                    h.task_id,
                    k,
                    h.n_train,
                    acc,
                    ff,
                    h.new_nnz,
                    h.shared_nnz,
                    started.elapsed().as_millis() as u64,
                ));
            }
            let mut h = Held {
                task_id: ds.task_id,
                inputs: ds.test.inputs.clone(),
                targets: ds.test.targets.clone(),
                audit_logits: Matrix::zeros(0, 0),
                accuracy: r.test_metric,
                n_train: ds.n_train(),
                new_nnz: r.new_nnz,
                shared_nnz: r.shared_nnz,
            };
            h.audit_logits = infer(&state, h.task_id, &h.audit_logits_inputs(setup.audit_rows))?;
            held.push(h);
        }
        run.n_train.push(ds.n_train());
        run.results.push(r);
        drop(ds);
        probe(k, &state, &mut run)?;
    }
    run.state = state;
    Ok(run)
}

impl Held {
    fn audit_logits_inputs(&self, rows: usize) -> Matrix<f32> {
        let n = rows.clamp(1, self.inputs.rows());
        self.inputs.gather_rows(&(0..n).collect::<Vec<_>>())
    }
}

/// Rows plus a typed summary of one experiment.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentOutput<R> {
    pub report: R,
    #[serde(skip)]
    pub rows: Vec<MetricRow>,
}

fn trial_train(cfg: &ExperimentConfig, seed: u64) -> TrainConfig {
    let mut t = cfg.train.clone();
    t.seed = seed;
    t
}

fn planted_model(cfg: &ExperimentConfig, tasks: usize, seed: u64) -> Result<PlantedModel> {
    let model = PlantedConfig {
        tasks,
        ..cfg.planted.model.clone()
    };
    PlantedModel::sample(model, seed)
}

fn require_mnist<'a>(cfg: &ExperimentConfig, raw: Option<&'a MnistSplits>) -> Result<Option<&'a MnistSplits>> {
    if cfg.family.is_mnist() && raw.is_none() {
        return Err(Error::MissingData(
            "this experiment needs MNIST: pass --mnist-dir or set ESPN_MNIST_DIR".into(),
        ));
    }
    Ok(raw)
}

fn capped(mut specs: Vec<TaskSpec>, cap: Option<usize>) -> Vec<TaskSpec> {
    for s in &mut specs {
        s.train_samples = cap;
    }
    specs
}

fn base_train_size(cfg: &ExperimentConfig, raw: Option<&MnistSplits>) -> usize {
    let full = match cfg.family {
        Family::Planted => cfg.planted.n_train,
        _ => raw.map_or(0, |r| r.train.len()),
    };
    cfg.train_samples.map_or(full, |c| c.min(full))
}

#[derive(Debug, Clone, Serialize)]
pub struct ClTrial {
    pub seed: u64,
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub audit: ForgettingAudit,
    pub used_fraction: f64,
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClReport {
    pub family: Family,
    pub method: Method,
    pub trials: Vec<ClTrial>,
    pub mean_accuracy: f64,
}

/// Continual run of `cfg.tasks` family tasks per trial, with the forgetting
/// audit; writes one checkpoint per trial when an output directory is set.
pub fn run_cl(cfg: &ExperimentConfig, raw: Option<&MnistSplits>) -> Result<ExperimentOutput<ClReport>> {
    cfg.validate()?;
    let raw = require_mnist(cfg, raw)?;
    let arch = cfg.architecture();
    let mut rows = Vec::new();
    let mut trials = Vec::new();
    for &seed in &cfg.seeds {
        let model = match cfg.family {
            Family::Planted => Some(planted_model(cfg, cfg.tasks, seed)?),
            _ => None,
        };
        let factory = TaskFactory {
            mnist: raw,
            planted: model.as_ref(),
            planted_n_train: cfg.planted.n_train,
            planted_n_test: cfg.planted.n_test,
            seed,
        };
        let train = trial_train(cfg, seed);
        let specs = capped(family_specs(cfg.family, cfg.tasks, cfg.order, seed), cfg.train_samples);
        let setup = SequenceSetup {
            arch: &arch,
            factory: &factory,
            train: &train,
            experiment: ExperimentKind::ClRun.name(),
            label: None,
            audit_rows: cfg.audit_rows,
        };
        let run = run_sequence(&setup, &specs, &[], &[])?;
        let checkpoint = match &cfg.output_dir {
            Some(dir) if train.method != Method::Individual => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join(format!("checkpoint_seed{seed}.espn"));
                let planted = model.as_ref().map(|m| &m.config);
                let meta = serde_json::json!({ "tasks": specs, "train": train, "family": cfg.family, "planted": planted,
                    "planted_n_train": cfg.planted.n_train, "planted_n_test": cfg.planted.n_test });
                save_checkpoint_with(&run.state, &path, meta)?;
                Some(path.display().to_string())
            }
            _ => None,
        };
        trials.push(ClTrial {
            seed,
            mean_accuracy: run.mean_accuracy(),
            accuracies: run.accuracies(),
            audit: run.audit.clone(),
            used_fraction: run.state.used as f64 / run.state.total_weights() as f64,
            checkpoint,
        });
        rows.extend(run.rows);
    }
    let report = ClReport {
        family: cfg.family,
        method: cfg.train.method,
        mean_accuracy: mean(&trials.iter().map(|t| t.mean_accuracy).collect::<Vec<_>>()),
        trials,
    };
    let plot = cfg.svg.then(|| {
        let series = report
            .trials
            .iter()
            .map(|t| Series::new(format!("seed {}", t.seed), t.accuracies.iter().enumerate().map(|(i, a)| ((i + 1) as f64, *a))))
            .collect::<Vec<_>>();
        line_plot("continual run", "task", "test metric", &series, false, false)
    });
    finish(cfg, ExperimentKind::ClRun, ExperimentOutput { report, rows }, plot)
}

#[derive(Debug, Clone, Serialize)]
pub struct DataEfficiencyReport {
    pub family: Family,
    /// Per seed, mean probe accuracy at each checkpoint.
    pub curves: Vec<(u64, Vec<(usize, f64)>)>,
    /// Mean over seeds.
    pub mean_curve: Vec<(usize, f64)>,
    /// Mean accuracy at the last checkpoint minus at the first.
    pub gain: f64,
}

/// Probe tasks for data-efficiency runs: family tasks `from+1 ..= from+count`
/// (ids from `PROBE_ID_BASE + 1`) cut to `train_samples`.
pub fn probe_specs(family: Family, from: usize, count: usize, order: super::TaskOrder, seed: u64, train_samples: usize) -> Vec<TaskSpec> {
    family_specs(family, from + count, order, seed)
        .into_iter()
        .skip(from)
        .enumerate()
        .map(|(i, mut s)| {
            s.task_id = PROBE_ID_BASE + i as TaskId + 1;
            s.train_samples = Some(train_samples);
            s
        })
        .collect()
}

pub fn data_efficiency_report(family: Family, runs: &[SequenceRun]) -> DataEfficiencyReport {
    let curves: Vec<(u64, Vec<(usize, f64)>)> = runs.iter().map(|r| (r.seed, r.probe_curve())).collect();
    let mean_curve: Vec<(usize, f64)> = curves
        .first()
        .map(|(_, c)| {
            c.iter()
                .enumerate()
                .map(|(i, &(cp, _))| (cp, mean(&curves.iter().map(|(_, c)| c[i].1).collect::<Vec<_>>())))
                .collect()
        })
        .unwrap_or_default();
    let gain = match (mean_curve.first(), mean_curve.last()) {
        (Some(a), Some(b)) => b.1 - a.1,
        _ => f64::NAN,
    };
    DataEfficiencyReport {
        family,
        curves,
        mean_curve,
        gain,
    }
}

/// K continual tasks with checkpoints `s_0..s_K`; at each, M small probe
/// tasks are trained on a copy of the supernet.
pub fn run_data_efficiency(cfg: &ExperimentConfig, raw: Option<&MnistSplits>) -> Result<ExperimentOutput<DataEfficiencyReport>> {
    cfg.validate()?;
    let raw = require_mnist(cfg, raw)?;
    let de = &cfg.data_efficiency;
    if !(de.probe_fraction > 0.0 && de.probe_fraction <= 1.0) || de.probes == 0 {
        return Err(Error::InvalidConfig("data efficiency needs probes and a fraction in (0, 1]".into()));
    }
    let arch = cfg.architecture();
    let probe_n = ((base_train_size(cfg, raw) as f64 * de.probe_fraction).round() as usize).max(2);
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let model = match cfg.family {
            Family::Planted => Some(planted_model(cfg, de.cl_tasks + de.probes, seed)?),
            _ => None,
        };
        let factory = TaskFactory {
            mnist: raw,
            planted: model.as_ref(),
            planted_n_train: cfg.planted.n_train,
            planted_n_test: cfg.planted.n_test,
            seed,
        };
        let train = trial_train(cfg, seed);
        let cl = capped(family_specs(cfg.family, de.cl_tasks, cfg.order, seed), cfg.train_samples);
        let probes = probe_specs(cfg.family, de.cl_tasks, de.probes, cfg.order, seed, probe_n);
        let setup = SequenceSetup {
            arch: &arch,
            factory: &factory,
            train: &train,
            experiment: ExperimentKind::DataEfficiency.name(),
            label: None,
            audit_rows: cfg.audit_rows,
        };
        let checkpoints: Vec<usize> = (0..=de.cl_tasks).collect();
        runs.push(run_sequence(&setup, &cl, &probes, &checkpoints)?);
    }
    let report = data_efficiency_report(cfg.family, &runs);
    let rows = runs.into_iter().flat_map(|r| r.rows).collect();
    let plot = cfg.svg.then(|| {
        let s = Series::new("mean probe accuracy", report.mean_curve.iter().map(|&(c, a)| (c as f64, a)));
        line_plot("probe accuracy by checkpoint", "checkpoint", "accuracy", &[s], false, false)
    });
    finish(cfg, ExperimentKind::DataEfficiency, ExperimentOutput { report, rows }, plot)
}

#[derive(Debug, Clone, Serialize)]
pub struct TaskOrderTrial {
    pub seed: u64,
    /// Indexed by task id − 1 (largest sample size first).
    pub decreasing: Vec<f64>,
    pub increasing: Vec<f64>,
    pub individual: Vec<f64>,
    pub n_train: Vec<usize>,
}

impl TaskOrderTrial {
    pub fn means(&self) -> (f64, f64, f64) {
        (mean(&self.decreasing), mean(&self.increasing), mean(&self.individual))
    }

    /// Means over the half of the tasks with the fewest samples.
    pub fn small_half_means(&self) -> (f64, f64, f64) {
        let h = self.decreasing.len() / 2;
        (
            mean(&self.decreasing[h..]),
            mean(&self.increasing[h..]),
            mean(&self.individual[h..]),
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TaskOrderReport {
    pub trials: Vec<TaskOrderTrial>,
}

/// Family tasks with geometric training-set sizes `n_first → n_last`; task
/// id 1 has the most samples.
pub fn task_order_specs(cfg: &ExperimentConfig, seed: u64) -> Vec<TaskSpec> {
    let to = &cfg.task_order;
    let ratio = to.n_last as f64 / to.n_first as f64;
    family_specs(cfg.family, to.tasks, cfg.order, seed)
        .into_iter()
        .enumerate()
        .map(|(i, mut s)| {
            s.train_samples = Some(sample_schedule(to.n_first, i + 1, to.tasks, ratio));
            s
        })
        .collect()
}

/// Decreasing- and increasing-sample-size orders of the same tasks, plus the
/// from-scratch baseline, under matched seeds.
pub fn run_task_order(cfg: &ExperimentConfig, raw: Option<&MnistSplits>) -> Result<ExperimentOutput<TaskOrderReport>> {
    cfg.validate()?;
    let raw = require_mnist(cfg, raw)?;
    let arch = cfg.architecture();
    let mut rows = Vec::new();
    let mut trials = Vec::new();
    for &seed in &cfg.seeds {
        let model = match cfg.family {
            Family::Planted => Some(planted_model(cfg, cfg.task_order.tasks, seed)?),
            _ => None,
        };
        let factory = TaskFactory {
            mnist: raw,
            planted: model.as_ref(),
            planted_n_train: cfg.planted.n_train,
            planted_n_test: cfg.planted.n_test,
            seed,
        };
        let specs = task_order_specs(cfg, seed);
        let reversed: Vec<TaskSpec> = specs.iter().rev().cloned().collect();
        let mut train = trial_train(cfg, seed);
        if train.method == Method::Individual {
            train.method = Method::Espn;
        }
        let by_id = |run: &SequenceRun| {
            let mut v = vec![0.0; specs.len()];
            for r in &run.results {
                v[r.task_id as usize - 1] = r.test_metric;
            }
            v
        };
        let one = |order: &[TaskSpec], train: &TrainConfig, label: &str| -> Result<SequenceRun> {
            let setup = SequenceSetup {
                arch: &arch,
                factory: &factory,
                train,
                experiment: ExperimentKind::TaskOrder.name(),
                label: Some(label),
                audit_rows: cfg.audit_rows,
            };
            run_sequence(&setup, order, &[], &[])
        };
        let dec = one(&specs, &train, "espn:decreasing")?;
        let inc = one(&reversed, &train, "espn:increasing")?;
        let mut ind_train = train.clone();
        ind_train.method = Method::Individual;
        let ind = one(&specs, &ind_train, "individual")?;
        trials.push(TaskOrderTrial {
            seed,
            decreasing: by_id(&dec),
            increasing: by_id(&inc),
            individual: by_id(&ind),
            n_train: dec.n_train.clone(),
        });
        for r in [dec, inc, ind] {
            rows.extend(r.rows);
        }
    }
    let report = TaskOrderReport { trials };
    let plot = cfg.svg.then(|| {
        let avg = |f: fn(&TaskOrderTrial) -> &Vec<f64>| -> Vec<(f64, f64)> {
            let n = f(&report.trials[0]).len();
            (0..n)
                .map(|i| ((i + 1) as f64, mean(&report.trials.iter().map(|t| f(t)[i]).collect::<Vec<_>>())))
                .collect()
        };
        let series = [
            Series::new("decreasing", avg(|t| &t.decreasing)),
            Series::new("increasing", avg(|t| &t.increasing)),
            Series::new("individual", avg(|t| &t.individual)),
        ];
        line_plot("accuracy by task (fewer samples to the right)", "task", "accuracy", &series, false, false)
    });
    finish(cfg, ExperimentKind::TaskOrder, ExperimentOutput { report, rows }, plot)
}

#[derive(Debug, Clone, Serialize)]
pub struct PruningEntry {
    pub seed: u64,
    pub gamma: f64,
    pub penalty: PenaltyKind,
    pub accuracy: f64,
    pub neuron_fraction: f64,
    pub flop_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PruningReport {
    pub entries: Vec<PruningEntry>,
}

impl PruningReport {
    pub fn get(&self, seed: u64, gamma: f64, penalty: PenaltyKind) -> Option<&PruningEntry> {
        self.entries.iter().find(|e| e.seed == seed && e.gamma == gamma && e.penalty == penalty)
    }
}

/// Single-task training from scratch on untransformed MNIST at each FLOP
/// fraction, under each sparsity penalty.
pub fn run_pruning_compare(cfg: &ExperimentConfig, raw: Option<&MnistSplits>) -> Result<ExperimentOutput<PruningReport>> {
    cfg.validate()?;
    let raw = raw.ok_or_else(|| {
        Error::MissingData("pruning comparison needs MNIST: pass --mnist-dir or set ESPN_MNIST_DIR".into())
    })?;
    let arch = cfg.arch.clone().unwrap_or_else(Architecture::fc1024);
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    for &seed in &cfg.seeds {
        let factory = TaskFactory::mnist(raw, seed);
        let spec = TaskSpec {
            task_id: 1,
            source: TaskSource::Base,
            train_samples: cfg.train_samples,
        };
        let ds = factory.build(&spec)?;
        for &gamma in &cfg.pruning.gammas {
            for &penalty in &cfg.pruning.penalties {
                let mut train = trial_train(cfg, seed);
                train.method = Method::Individual;
                train.prune.gamma = gamma;
                train.prune.penalty = penalty;
                let r = learn_individual(&arch, &ds, &train)?;
                rows.push(MetricRow {
                    experiment: ExperimentKind::PruningCompare.name().into(),
                    trial_seed: seed,
                    task_id: 1,
                    checkpoint_id: 1,
                    method: format!("individual:{}", penalty_name(penalty)),
                    gamma,
                    alpha: 1.0,
                    n_train: ds.n_train(),
                    accuracy_or_risk: r.test_metric,
                    flop_fraction: r.flops.fraction,
                    new_nnz: r.new_nnz,
                    shared_nnz: r.shared_nnz,
                    wall_ms: r.wall_ms,
                });
                entries.push(PruningEntry {
                    seed,
                    gamma,
                    penalty,
                    accuracy: r.test_metric,
                    neuron_fraction: r.neuron_fraction,
                    flop_fraction: r.flops.fraction,
                });
            }
        }
    }
    let report = PruningReport { entries };
    let plot = cfg.svg.then(|| {
        let series: Vec<Series> = cfg
            .pruning
            .penalties
            .iter()
            .map(|&p| {
                let pts = cfg.pruning.gammas.iter().map(|&g| {
                    let v: Vec<f64> = report
                        .entries
                        .iter()
                        .filter(|e| e.penalty == p && e.gamma == g)
                        .map(|e| e.neuron_fraction)
                        .collect();
                    (g, mean(&v))
                });
                Series::new(penalty_name(p), pts)
            })
            .collect();
        line_plot("surviving neurons", "FLOP fraction", "neuron fraction", &series, true, false)
    });
    finish(cfg, ExperimentKind::PruningCompare, ExperimentOutput { report, rows }, plot)
}

pub fn penalty_name(p: PenaltyKind) -> &'static str {
    match p {
        PenaltyKind::FlopAware => "flop_aware",
        PenaltyKind::L1Uniform => "l1_uniform",
        PenaltyKind::None => "none",
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AlphaEntry {
    pub seed: u64,
    pub alpha: f64,
    pub gamma: f64,
    pub mean_accuracy: f64,
    pub accuracies: Vec<f64>,
    /// `p_T / p` after the last task.
    pub used_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AlphaReport {
    pub entries: Vec<AlphaEntry>,
}

/// Continual runs over the `(α, γ)` grid.
pub fn run_alpha_sweep(cfg: &ExperimentConfig, raw: Option<&MnistSplits>) -> Result<ExperimentOutput<AlphaReport>> {
    cfg.validate()?;
    let raw = require_mnist(cfg, raw)?;
    let arch = cfg.architecture();
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    for &seed in &cfg.seeds {
        let model = match cfg.family {
            Family::Planted => Some(planted_model(cfg, cfg.tasks, seed)?),
            _ => None,
        };
        let factory = TaskFactory {
            mnist: raw,
            planted: model.as_ref(),
            planted_n_train: cfg.planted.n_train,
            planted_n_test: cfg.planted.n_test,
            seed,
        };
        let specs = capped(family_specs(cfg.family, cfg.tasks, cfg.order, seed), cfg.train_samples);
        for &alpha in &cfg.alpha_sweep.alphas {
            for &gamma in &cfg.alpha_sweep.gammas {
                let mut train = trial_train(cfg, seed);
                train.method = Method::Espn;
                train.prune.alpha = alpha;
                train.prune.gamma = gamma;
                let setup = SequenceSetup {
                    arch: &arch,
                    factory: &factory,
                    train: &train,
                    experiment: ExperimentKind::AlphaSweep.name(),
                    label: None,
                    audit_rows: cfg.audit_rows,
                };
                let run = run_sequence(&setup, &specs, &[], &[])?;
                entries.push(AlphaEntry {
                    seed,
                    alpha,
                    gamma,
                    mean_accuracy: run.mean_accuracy(),
                    accuracies: run.accuracies(),
                    used_fraction: run.state.used as f64 / run.state.total_weights() as f64,
                });
                rows.extend(run.rows);
            }
        }
    }
    let report = AlphaReport { entries };
    let plot = cfg.svg.then(|| {
        let series: Vec<Series> = cfg
            .alpha_sweep
            .gammas
            .iter()
            .map(|&g| {
                let pts = cfg.alpha_sweep.alphas.iter().map(|&a| {
                    let v: Vec<f64> = report
                        .entries
                        .iter()
                        .filter(|e| e.alpha == a && e.gamma == g)
                        .map(|e| e.mean_accuracy)
                        .collect();
                    (a, mean(&v))
                });
                Series::new(format!("gamma {g}"), pts)
            })
            .collect();
        line_plot("task-averaged accuracy", "alpha", "accuracy", &series, true, false)
    });
    finish(cfg, ExperimentKind::AlphaSweep, ExperimentOutput { report, rows }, plot)
}

#[derive(Debug, Clone, Serialize)]
pub struct PlantedReport {
    pub points: Vec<SweepPoint>,
    /// Median excess risk over seeds at each N.
    pub medians: Vec<(f64, f64)>,
    pub fit: ScalingFit,
    /// Median excess risk at `fixed_n` for each number of frozen rows.
    pub r_frz_curve: Vec<(usize, f64)>,
    pub mismatch: MismatchEstimate,
}

/// Excess-risk scaling in N, excess risk against the number of frozen rows,
/// and the mismatch of the compatible frozen rows.
pub fn run_planted_scaling(cfg: &ExperimentConfig) -> Result<ExperimentOutput<PlantedReport>> {
    cfg.validate()?;
    let pc = &cfg.planted;
    let started = Instant::now();
    let points = excess_risk_sweep(&pc.model, &pc.ns, &cfg.seeds, pc.n_mc, &pc.erm)?;
    let medians = median_by_n(&points);
    let fit = fit_scaling_exponent(&medians)?;
    let mut rows: Vec<MetricRow> = points
        .iter()
        .map(|p| planted_row(p, started.elapsed().as_millis() as u64))
        .collect();
    let mut r_frz_curve = Vec::new();
    for &r_frz in &pc.r_frz_values {
        let model = PlantedConfig {
            r_frz,
            ..pc.model.clone()
        };
        let pts = excess_risk_sweep(&model, &[pc.fixed_n], &cfg.seeds, pc.n_mc, &pc.erm)?;
        r_frz_curve.push((r_frz, median_by_n(&pts)[0].1));
        rows.extend(pts.iter().map(|p| planted_row(p, started.elapsed().as_millis() as u64)));
    }
    let model = PlantedModel::sample(pc.model.clone(), cfg.seeds[0])?;
    let mismatch = estimate_mismatch(
        &model,
        &model.w_frz(),
        pc.model.r - pc.model.r_frz,
        pc.n_large,
        pc.mismatch_mc,
        cfg.seeds[0],
    )?;
    let report = PlantedReport {
        points,
        medians,
        fit,
        r_frz_curve,
        mismatch,
    };
    let plot = cfg.svg.then(|| {
        let s = Series::new("median excess risk", report.medians.iter().copied());
        line_plot("excess risk against samples per task", "N", "excess risk", &[s], true, true)
    });
    finish(cfg, ExperimentKind::PlantedScaling, ExperimentOutput { report, rows }, plot)
}

fn planted_row(p: &SweepPoint, wall_ms: u64) -> MetricRow {
    MetricRow {
        experiment: ExperimentKind::PlantedScaling.name().into(),
        trial_seed: p.seed,
        task_id: 0,
        checkpoint_id: p.r_frz as u32,
        method: "erm".into(),
        gamma: 1.0,
        alpha: 1.0,
        n_train: p.n,
        accuracy_or_risk: p.excess.value,
        flop_fraction: 1.0,
        new_nnz: 0,
        shared_nnz: 0,
        wall_ms,
    }
}

fn finish<R: Serialize>(
    cfg: &ExperimentConfig,
    kind: ExperimentKind,
    out: ExperimentOutput<R>,
    svg: Option<String>,
) -> Result<ExperimentOutput<R>> {
    if let Some(dir) = &cfg.output_dir {
        write_outputs(dir, kind.name(), &out, svg.as_deref())?;
    }
    Ok(out)
}

/// `<name>.csv`, `<name>_summary.json` and optionally `<name>.svg` in `dir`.
pub fn write_outputs<R: Serialize>(dir: &Path, name: &str, out: &ExperimentOutput<R>, svg: Option<&str>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv(&dir.join(format!("{name}.csv")), &out.rows)?;
    let summary = dir.join(format!("{name}_summary.json"));
    std::fs::write(&summary, serde_json::to_string_pretty(&out.report)?).map_err(|e| Error::io(&summary, e))?;
    if let Some(svg) = svg {
        let p = dir.join(format!("{name}.svg"));
        std::fs::write(&p, svg).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// Runs `cfg.experiment` and returns its summary as JSON.
pub fn run_experiment(cfg: &ExperimentConfig, raw: Option<&MnistSplits>) -> Result<serde_json::Value> {
    let v = match cfg.experiment {
        ExperimentKind::ClRun => serde_json::to_value(run_cl(cfg, raw)?.report)?,
        ExperimentKind::DataEfficiency => serde_json::to_value(run_data_efficiency(cfg, raw)?.report)?,
        ExperimentKind::TaskOrder => serde_json::to_value(run_task_order(cfg, raw)?.report)?,
        ExperimentKind::PruningCompare => serde_json::to_value(run_pruning_compare(cfg, raw)?.report)?,
        ExperimentKind::AlphaSweep => serde_json::to_value(run_alpha_sweep(cfg, raw)?.report)?,
        ExperimentKind::PlantedScaling => serde_json::to_value(run_planted_scaling(cfg)?.report)?,
    };
    Ok(v)
}
