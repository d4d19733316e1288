//! Experiment drivers, metrics CSV and checkpoint I/O.

pub mod checkpoint;
mod experiments;
pub mod metrics;
pub mod plot;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use experiments::*;
pub use metrics::{MetricRow, MetricsWriter};

use crate::engine::TrainConfig;
use crate::error::{Error, Result};
use crate::mask::TaskId;
use crate::nn::{Activation, Architecture, HeadKind};
use crate::pruning::PenaltyKind;
use crate::rng::{derive_seed, stream, Purpose};
use crate::tasks::{
    base_task, permute_task, planted_task, rotate_task, subsample, Amount, MnistSplits, PlantedConfig, PlantedModel,
    TaskDataset,
};
use crate::theory::ErmConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    ClRun,
    DataEfficiency,
    TaskOrder,
    PruningCompare,
    AlphaSweep,
    PlantedScaling,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ClRun => "cl_run",
            ExperimentKind::DataEfficiency => "data_efficiency",
            ExperimentKind::TaskOrder => "task_order",
            ExperimentKind::PruningCompare => "pruning_compare",
            ExperimentKind::AlphaSweep => "alpha_sweep",
            ExperimentKind::PlantedScaling => "planted_scaling",
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    /// Accepts `data-efficiency` as well as `data_efficiency`.
    fn from_str(s: &str) -> Result<Self> {
        let k = match s.replace('-', "_").as_str() {
            "cl_run" => ExperimentKind::ClRun,
            "data_efficiency" => ExperimentKind::DataEfficiency,
            "task_order" => ExperimentKind::TaskOrder,
            "pruning_compare" => ExperimentKind::PruningCompare,
            "alpha_sweep" => ExperimentKind::AlphaSweep,
            "planted_scaling" => ExperimentKind::PlantedScaling,
            _ => return Err(Error::InvalidConfig(format!("unknown experiment `{s}`"))),
        };
        Ok(k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Rotated,
    Permuted,
    Planted,
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rotated" => Ok(Family::Rotated),
            "permuted" => Ok(Family::Permuted),
            "planted" => Ok(Family::Planted),
            _ => Err(Error::InvalidConfig(format!("unknown task family `{s}`"))),
        }
    }
}

impl Family {
    pub fn is_mnist(self) -> bool {
        !matches!(self, Family::Planted)
    }
}

/// Order in which a family's tasks are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskOrder {
    /// Rotations by increasing angle.
    Natural,
    /// Seeded random order.
    Shuffled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataEfficiencyConfig {
    pub cl_tasks: usize,
    pub probes: usize,
    pub probe_fraction: f64,
}

impl Default for DataEfficiencyConfig {
    fn default() -> Self {
        Self {
            cl_tasks: 10,
            probes: 3,
            probe_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskOrderConfig {
    pub tasks: usize,
    pub n_first: usize,
    pub n_last: usize,
}

impl Default for TaskOrderConfig {
    fn default() -> Self {
        Self {
            tasks: 20,
            n_first: 2500,
            n_last: 125,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruningCompareConfig {
    pub gammas: Vec<f64>,
    pub penalties: Vec<PenaltyKind>,
}

impl Default for PruningCompareConfig {
    fn default() -> Self {
        Self {
            gammas: vec![1.0, 0.5, 0.2, 0.1, 0.05],
            penalties: vec![PenaltyKind::FlopAware, PenaltyKind::L1Uniform],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlphaSweepConfig {
    pub alphas: Vec<f64>,
    pub gammas: Vec<f64>,
}

impl Default for AlphaSweepConfig {
    fn default() -> Self {
        Self {
            alphas: vec![0.005, 0.05, 0.1, 1.0],
            gammas: vec![0.2, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedExperimentConfig {
    pub model: PlantedConfig,
    /// Per-task sample sizes of the scaling sweep.
    pub ns: Vec<usize>,
    /// Sample size of the frozen-rows sweep.
    pub fixed_n: usize,
    pub r_frz_values: Vec<usize>,
    pub n_mc: usize,
    pub n_large: usize,
    pub mismatch_mc: usize,
    pub erm: ErmConfig,
    /// Hidden width of the supernet for continual runs on planted tasks.
    pub hidden: usize,
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for PlantedExperimentConfig {
    fn default() -> Self {
        let model = PlantedConfig::default();
        Self {
            ns: vec![50, 100, 200, 400, 800, 1600],
            fixed_n: 200,
            r_frz_values: (0..=model.r).collect(),
            model,
            n_mc: 20_000,
            n_large: 50_000,
            mismatch_mc: 100_000,
            erm: ErmConfig::default(),
            hidden: 64,
            n_train: 1000,
            n_test: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub family: Family,
    pub tasks: usize,
    pub order: TaskOrder,
    pub train: TrainConfig,
    /// Defaults to FC1024 for MNIST families and a small per-task-head MLP
    /// for planted tasks.
    pub arch: Option<Architecture>,
    pub trials: usize,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    /// Cap on each task's training split.
    pub train_samples: Option<usize>,
    /// Test rows whose logits the forgetting audit compares bit for bit.
    pub audit_rows: usize,
    pub data_efficiency: DataEfficiencyConfig,
    pub task_order: TaskOrderConfig,
    pub pruning: PruningCompareConfig,
    pub alpha_sweep: AlphaSweepConfig,
    pub planted: PlantedExperimentConfig,
    pub svg: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::ClRun,
            family: Family::Rotated,
            tasks: 12,
            order: TaskOrder::Shuffled,
            train: TrainConfig::default(),
            arch: None,
            trials: 3,
            seeds: vec![1, 2, 3],
            output_dir: None,
            train_samples: None,
            audit_rows: 256,
            data_efficiency: DataEfficiencyConfig::default(),
            task_order: TaskOrderConfig::default(),
            pruning: PruningCompareConfig::default(),
            alpha_sweep: AlphaSweepConfig::default(),
            planted: PlantedExperimentConfig::default(),
            svg: true,
        }
    }
}

impl ExperimentConfig {
    /// 36 tasks and 5 trials.
    pub fn full_scale(mut self) -> Self {
        self.tasks = 36;
        self.trials = 5;
        self.seeds = (1..=5).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.seeds.len() != self.trials {
            return Err(Error::InvalidConfig(format!(
                "{} seeds given for {} trials",
                self.seeds.len(),
                self.trials
            )));
        }
        if self.tasks == 0 {
            return Err(Error::InvalidConfig("need at least one task".into()));
        }
        self.train.validate()?;
        self.planted.model.validate()?;
        if let Some(a) = &self.arch {
            a.validate()?;
        }
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        if let Some(a) = &self.arch {
            return a.clone();
        }
        match self.family {
            Family::Rotated | Family::Permuted => Architecture::fc1024(),
            Family::Planted => planted_architecture(self.planted.model.d, self.planted.hidden),
        }
    }
}

/// `[d, hidden, hidden, 1]` with batch norm and a private sigmoid head per task.
pub fn planted_architecture(d: usize, hidden: usize) -> Architecture {
    Architecture {
        layer_dims: vec![d, hidden, hidden, 1],
        activation: Activation::Relu,
        batchnorm: vec![true, true],
        head: HeadKind::PerTaskLinearSigmoid,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum TaskSource {
    Base,
    Rotated { degrees: f64 },
    Permuted { perm_seed: u64 },
    Planted { task_index: usize },
}

/// A task to be generated on demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: TaskId,
    pub source: TaskSource,
    pub train_samples: Option<usize>,
}

/// Rotations live on a 10° grid (`10°, 20°, …, 350°, 0°`) unless more tasks
/// are requested than the grid holds.
pub const ROTATION_GRID: usize = 36;

/// The first `count` tasks of a family, ids `1..=count`. Permutation seeds
/// and the shuffled rotation order derive from `seed`.
pub fn family_specs(family: Family, count: usize, order: TaskOrder, seed: u64) -> Vec<TaskSpec> {
    let sources: Vec<TaskSource> = match family {
        Family::Rotated => {
            let grid = ROTATION_GRID.max(count);
            let mut angles: Vec<f64> = (1..=grid).map(|k| (360.0 * k as f64 / grid as f64) % 360.0).collect();
            if order == TaskOrder::Shuffled {
                angles.shuffle(&mut stream(seed, 0, Purpose::TaskOrder));
            }
            angles.into_iter().take(count).map(|degrees| TaskSource::Rotated { degrees }).collect()
        }
        Family::Permuted => (1..=count as u64)
            .map(|k| TaskSource::Permuted {
                perm_seed: derive_seed(seed, k, Purpose::Permutation),
            })
            .collect(),
        Family::Planted => (0..count).map(|task_index| TaskSource::Planted { task_index }).collect(),
    };
    sources
        .into_iter()
        .enumerate()
        .map(|(i, source)| TaskSpec {
            task_id: i as TaskId + 1,
            source,
            train_samples: None,
        })
        .collect()
}

/// Materializes task specs from MNIST and/or a planted model.
pub struct TaskFactory<'a> {
    pub mnist: Option<&'a MnistSplits>,
    pub planted: Option<&'a PlantedModel>,
    pub planted_n_train: usize,
    pub planted_n_test: usize,
    /// Seed for subsampling and planted draws.
    pub seed: u64,
}

impl<'a> TaskFactory<'a> {
    pub fn mnist(raw: &'a MnistSplits, seed: u64) -> Self {
        Self {
            mnist: Some(raw),
            planted: None,
            planted_n_train: 0,
            planted_n_test: 0,
            seed,
        }
    }

    pub fn build(&self, spec: &TaskSpec) -> Result<TaskDataset> {
        let raw = || {
            self.mnist
                .ok_or_else(|| Error::MissingData("MNIST is required for this task family".into()))
        };
        let ds = match &spec.source {
            TaskSource::Base => base_task(raw()?, spec.task_id),
            TaskSource::Rotated { degrees } => rotate_task(raw()?, *degrees, spec.task_id)?,
            TaskSource::Permuted { perm_seed } => permute_task(raw()?, *perm_seed, spec.task_id),
            TaskSource::Planted { task_index } => {
                let model = self
                    .planted
                    .ok_or_else(|| Error::InvalidConfig("planted task without a planted model".into()))?;
                if *task_index >= model.config.tasks {
                    return Err(Error::InvalidConfig(format!(
                        "planted task {task_index} out of {}",
                        model.config.tasks
                    )));
                }
                let mut ds = planted_task(model, *task_index, self.planted_n_train, self.planted_n_test, self.seed);
                ds.task_id = spec.task_id;
                ds
            }
        };
        match spec.train_samples {
            Some(k) if k < ds.n_train() => subsample(&ds, Amount::Count(k), self.seed),
            _ => Ok(ds),
        }
    }
}
