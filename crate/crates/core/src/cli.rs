//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 runtime
//! error, 3 data error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::engine::{evaluate_task, Epochs, Method};
use crate::error::{Error, Result};
use crate::flops::total_flops;
use crate::harness::checkpoint::{load_checkpoint_with, read_header};
use crate::harness::{
    family_specs, metrics::write_csv, run_cl, run_experiment, ExperimentConfig, ExperimentKind, Family, MetricRow,
    TaskFactory, TaskSource, TaskSpec,
};
use crate::tasks::{load_mnist_dir, MnistSplits, PlantedConfig, PlantedModel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_DATA: i32 = 3;

const AFTER_HELP: &str = "\
Precedence: built-in defaults < --config file < --full < individual flags.
--seed S with --trials N runs seeds S..S+N-1; --seed alone runs one trial;
--trials alone runs seeds 1..N.
MNIST families need --mnist-dir (or ESPN_MNIST_DIR) pointing at a directory
with the four IDX files, optionally gzipped.
Exit codes: 0 ok, 1 usage error, 2 runtime error, 3 data error.";

#[derive(Parser, Debug)]
#[command(name = "espn", version, about = "FLOP-budgeted sparse continual learning", after_help = AFTER_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Args, Debug, Default, Clone)]
pub struct Flags {
    /// JSON experiment config; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// espn, packnet or individual.
    #[arg(long, global = true)]
    pub method: Option<Method>,
    /// FLOP budget as a fraction of the dense network.
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    /// Fraction of the remaining free weights a task may claim.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub tasks: Option<usize>,
    /// rotated, permuted or planted.
    #[arg(long, global = true)]
    pub family: Option<Family>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Pre-train, prune and fine-tune epochs, e.g. 3,4,3.
    #[arg(long, global = true, value_name = "A,B,C")]
    pub epochs: Option<String>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// 36 tasks and 5 trials instead of 12 and 3.
    #[arg(long, global = true)]
    pub full: bool,
    /// Directory with the MNIST IDX files; falls back to ESPN_MNIST_DIR.
    #[arg(long, global = true, value_name = "DIR")]
    pub mnist_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a task sequence; writes metrics and a checkpoint per trial.
    TrainCl,
    /// Re-evaluate every task stored in a checkpoint.
    Eval {
        checkpoint: PathBuf,
    },
    /// Write task descriptions and previews for a family.
    GenTasks,
    /// Run a named experiment: cl-run, data-efficiency, task-order,
    /// pruning-compare, alpha-sweep or planted-scaling.
    Experiment {
        name: ExperimentKind,
    },
    /// Print the header and per-task statistics of a checkpoint.
    InspectCheckpoint {
        checkpoint: PathBuf,
    },
}

fn parse_epochs(s: &str) -> Result<Epochs> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let nums: Vec<usize> = parts
        .iter()
        .map(|p| p.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidConfig(format!("--epochs expects three integers a,b,c, got `{s}`")))?;
    match nums[..] {
        [pre, prune, fine] => Ok(Epochs { pre, prune, fine }),
        _ => Err(Error::InvalidConfig(format!("--epochs expects three integers a,b,c, got `{s}`"))),
    }
}

/// Applies the precedence chain to produce the experiment config.
pub fn resolve_config(flags: &Flags, experiment: ExperimentKind, default_out: &str) -> Result<ExperimentConfig> {
    let mut cfg = match &flags.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?
        }
        None => ExperimentConfig::default(),
    };
    cfg.experiment = experiment;
    if flags.full {
        cfg = cfg.full_scale();
    }
    if let Some(m) = flags.method {
        cfg.train.method = m;
    }
    if let Some(g) = flags.gamma {
        cfg.train.prune.gamma = g;
        cfg.pruning.gammas = vec![g];
        cfg.alpha_sweep.gammas = vec![g];
    }
    if let Some(a) = flags.alpha {
        cfg.train.prune.alpha = a;
        cfg.alpha_sweep.alphas = vec![a];
    }
    if let Some(t) = flags.tasks {
        cfg.tasks = t;
    }
    if let Some(f) = flags.family {
        cfg.family = f;
    }
    match (flags.seed, flags.trials) {
        (Some(s), t) => {
            let n = t.unwrap_or(1);
            cfg.trials = n;
            cfg.seeds = (0..n as u64).map(|i| s + i).collect();
        }
        (None, Some(n)) => {
            cfg.trials = n;
            cfg.seeds = (1..=n as u64).collect();
        }
        (None, None) => {}
    }
    if let Some(e) = &flags.epochs {
        cfg.train.epochs = parse_epochs(e)?;
    }
    if let Some(o) = &flags.out {
        cfg.output_dir = Some(o.clone());
    } else if cfg.output_dir.is_none() {
        cfg.output_dir = Some(PathBuf::from(default_out));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn mnist_dir(flags: &Flags) -> Option<PathBuf> {
    flags
        .mnist_dir
        .clone()
        .or_else(|| std::env::var_os("ESPN_MNIST_DIR").filter(|v| !v.is_empty()).map(PathBuf::from))
}

fn load_mnist(flags: &Flags) -> Result<MnistSplits> {
    let dir = mnist_dir(flags).ok_or_else(|| {
        Error::MissingData(
            "MNIST data not found: pass --mnist-dir <dir> or set ESPN_MNIST_DIR to a directory holding \
             train-images-idx3-ubyte, train-labels-idx1-ubyte, t10k-images-idx3-ubyte and t10k-labels-idx1-ubyte \
             (gzipped files are fine; the repository ships a subset in data/mnist-mini)"
                .into(),
        )
    })?;
    load_mnist_dir(&dir)
}

fn needs_mnist(cfg: &ExperimentConfig) -> bool {
    match cfg.experiment {
        ExperimentKind::PlantedScaling => false,
        ExperimentKind::PruningCompare => true,
        _ => cfg.family.is_mnist(),
    }
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(v)?;
    // a closed pipe (e.g. `| head`) is not an error
    let _ = writeln!(std::io::stdout(), "{text}");
    Ok(())
}

fn train_cl(flags: &Flags) -> Result<()> {
    let cfg = resolve_config(flags, ExperimentKind::ClRun, "runs/train-cl")?;
    let raw = if needs_mnist(&cfg) { Some(load_mnist(flags)?) } else { None };
    let out = run_cl(&cfg, raw.as_ref())?;
    for t in &out.report.trials {
        eprintln!(
            "seed {}: mean test metric {:.3} over {} tasks, forgetting audit {} ({} comparisons)",
            t.seed,
            t.mean_accuracy,
            t.accuracies.len(),
            if t.audit.is_clean() { "clean" } else { "DRIFT" },
            t.audit.comparisons
        );
    }
    print_json(&out.report)
}

fn experiment(flags: &Flags, kind: ExperimentKind) -> Result<()> {
    let default_out = format!("runs/{}", kind.name());
    let cfg = resolve_config(flags, kind, &default_out)?;
    let raw = if needs_mnist(&cfg) { Some(load_mnist(flags)?) } else { None };
    let report = run_experiment(&cfg, raw.as_ref())?;
    if let Some(dir) = &cfg.output_dir {
        eprintln!("wrote {}/{}.csv", dir.display(), kind.name());
    }
    print_json(&report)
}

#[derive(serde::Deserialize)]
struct CheckpointMeta {
    tasks: Vec<TaskSpec>,
    train: crate::engine::TrainConfig,
    family: Family,
    #[serde(default)]
    planted: Option<PlantedConfig>,
    #[serde(default)]
    planted_n_train: usize,
    #[serde(default)]
    planted_n_test: usize,
}

fn eval(flags: &Flags, path: &Path) -> Result<()> {
    let (state, meta) = load_checkpoint_with(path)?;
    let meta: CheckpointMeta = serde_json::from_value(meta).map_err(|_| {
        Error::InvalidConfig(format!("{} carries no task metadata; only train-cl checkpoints can be evaluated", path.display()))
    })?;
    let raw = if meta.family.is_mnist() { Some(load_mnist(flags)?) } else { None };
    let model = match (&meta.planted, meta.family) {
        (Some(pc), Family::Planted) => Some(PlantedModel::sample(pc.clone(), meta.train.seed)?),
        _ => None,
    };
    let factory = TaskFactory {
        mnist: raw.as_ref(),
        planted: model.as_ref(),
        planted_n_train: meta.planted_n_train,
        planted_n_test: meta.planted_n_test,
        seed: meta.train.seed,
    };
    let mut rows = Vec::new();
    for spec in &meta.tasks {
        if !state.tasks.contains_key(&spec.task_id) {
            continue;
        }
        let ds = factory.build(spec)?;
        let started = std::time::Instant::now();
        let metric = evaluate_task(&state, spec.task_id, &ds.test.inputs, &ds.test.targets)?;
        let rec = state.task(spec.task_id)?;
        println!("task {:>3}  test metric {:.3}", spec.task_id, metric);
        rows.push(MetricRow {
            experiment: "eval".into(),
            trial_seed: meta.train.seed,
            task_id: spec.task_id,
            checkpoint_id: state.tasks.len() as u32,
            method: meta.train.method.name().into(),
            gamma: meta.train.prune.gamma,
            alpha: meta.train.prune.alpha,
            n_train: ds.n_train(),
            accuracy_or_risk: metric,
            flop_fraction: total_flops(&state.arch, &rec.neurons).fraction,
            new_nnz: rec.new_nnz,
            shared_nnz: rec.weights.popcount() - rec.new_nnz,
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }
    if let Some(dir) = &flags.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_csv(&dir.join("eval.csv"), &rows)?;
    }
    Ok(())
}

fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[f32]) -> Result<()> {
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(pixels.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn gen_tasks(flags: &Flags) -> Result<()> {
    let cfg = resolve_config(flags, ExperimentKind::ClRun, "runs/tasks")?;
    let dir = cfg.output_dir.clone().unwrap_or_default();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let seed = cfg.seeds[0];
    let raw = if cfg.family.is_mnist() { Some(load_mnist(flags)?) } else { None };
    let model = match cfg.family {
        Family::Planted => Some(PlantedModel::sample(
            PlantedConfig {
                tasks: cfg.tasks,
                ..cfg.planted.model.clone()
            },
            seed,
        )?),
        _ => None,
    };
    let factory = TaskFactory {
        mnist: raw.as_ref(),
        planted: model.as_ref(),
        planted_n_train: cfg.planted.n_train,
        planted_n_test: cfg.planted.n_test,
        seed,
    };
    let specs = family_specs(cfg.family, cfg.tasks, cfg.order, seed);
    let mut listing = Vec::new();
    for spec in &specs {
        let ds = factory.build(spec)?;
        match spec.source {
            TaskSource::Planted { .. } => {
                let path = dir.join(format!("task_{}_train.csv", spec.task_id));
                let mut w = csv::Writer::from_path(&path)?;
                let d = ds.train.inputs.cols();
                let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
                header.push("y".into());
                w.write_record(&header)?;
                if let crate::nn::Targets::Values(ys) = &ds.train.targets {
                    for (i, y) in ys.iter().enumerate() {
                        let mut rec: Vec<String> = ds.train.inputs.row(i).iter().map(|v| v.to_string()).collect();
                        rec.push(y.to_string());
                        w.write_record(&rec)?;
                    }
                }
                w.flush().map_err(|e| Error::io(&path, e))?;
            }
            _ => {
                // ten test digits side by side
                let n = ds.n_test().min(10);
                let mut img = vec![0.0f32; 28 * 28 * n];
                for k in 0..n {
                    let src = ds.test.inputs.row(k);
                    for r in 0..28 {
                        for c in 0..28 {
                            img[r * 28 * n + k * 28 + c] = src[r * 28 + c];
                        }
                    }
                }
                write_pgm(&dir.join(format!("task_{}_preview.pgm", spec.task_id)), 28 * n, 28, &img)?;
            }
        }
        listing.push(serde_json::json!({
            "task_id": spec.task_id,
            "meta": ds.meta,
            "n_train": ds.n_train(),
            "n_test": ds.n_test(),
        }));
    }
    let path = dir.join("tasks.json");
    std::fs::write(&path, serde_json::to_string_pretty(&listing)?).map_err(|e| Error::io(&path, e))?;
    eprintln!("wrote {} task descriptions to {}", specs.len(), dir.display());
    Ok(())
}

fn inspect(path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, _) = read_header(&bytes)?;
    let (state, _) = crate::harness::checkpoint::from_bytes(&bytes)?;
    let tasks: Vec<_> = state
        .tasks
        .iter()
        .map(|(id, rec)| {
            serde_json::json!({
                "task_id": id,
                "new_nnz": rec.new_nnz,
                "nnz": rec.weights.popcount(),
                "active_neurons": rec.neurons.total_active_hidden(),
                "flop_fraction": total_flops(&state.arch, &rec.neurons).fraction,
            })
        })
        .collect();
    print_json(&serde_json::json!({
        "layer_dims": header.architecture.layer_dims,
        "head": header.architecture.head,
        "sections": header.sections.len(),
        "used_weights": state.used,
        "total_weights": state.total_weights(),
        "tasks": tasks,
        "metadata": header.metadata,
    }))
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::TrainCl => train_cl(&cli.flags),
        Command::Eval { checkpoint } => eval(&cli.flags, checkpoint),
        Command::GenTasks => gen_tasks(&cli.flags),
        Command::Experiment { name } => experiment(&cli.flags, *name),
        Command::InspectCheckpoint { checkpoint } => inspect(checkpoint),
    }
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_data_error() {
                EXIT_DATA
            } else if matches!(e, Error::InvalidConfig(_)) {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
