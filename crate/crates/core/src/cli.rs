//! Command-line interface.
//!
//! Every command writes `manifest.json` into `--out`; `replay` re-runs a
//! command from that file alone.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use composer_autodiff::Scalar;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ablation::{run_ablation, Axis};
use crate::bundle::Model;
use crate::checkpoint::Checkpoint;
use crate::config::{ExperimentConfig, Precision, Predictor};
use crate::data::{hex_digest, Dataset, Split};
use crate::error::{Error, Result};
use crate::metrics::mean;
use crate::train::{evaluate, train, TrainLog, TrainOptions, TtoConfig, TtoReport, TtoScope};
use crate::viz::{viz_activations, viz_reconstruction};

pub const THREADS_ENV: &str = "COMPOSER_INR_THREADS";
pub const MANIFEST: &str = "manifest.json";

#[derive(Parser, Debug, Clone, Serialize, Deserialize)]
#[command(
    name = "composer-inr",
    version,
    about = "Generalizable implicit neural representations with instance pattern composers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct Common {
    /// JSON experiment config (defaults to the desk grating experiment).
    /// Not read when --checkpoint is given.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint to load; it carries its own config.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Train the hypernetwork and shared MLP.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Full-grid PSNR of a checkpoint on one split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Meta-learn the shared MLP and the composer initialization.
    MetaTrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Test-time optimization on held-out instances.
    Tto {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "composer_only")]
        scope: String,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        /// Number of test-split instances to refine.
        #[arg(long, default_value_t = 16)]
        count: usize,
    },
    /// One training run per arm of the variant or modulated-layer axis.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "variant")]
        axis: String,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Grayscale activation maps of the top-variance neurons per layer.
    VizActivations {
        #[command(flatten)]
        common: Common,
        /// Dataset index of the instance.
        #[arg(long, default_value_t = 0)]
        instance: usize,
        #[arg(long, default_value_t = 4)]
        k: usize,
    },
    /// Target | reconstruction pairs with PSNR in the file name.
    VizReconstruction {
        #[command(flatten)]
        common: Common,
        /// Comma-separated dataset indices (defaults to the first 8 test instances).
        #[arg(long, value_delimiter = ',')]
        instances: Vec<usize>,
    },
    /// Re-run a command from its manifest.
    Replay {
        manifest: PathBuf,
        /// Output directory for the rerun (defaults to the original one).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::MetaTrain { .. } => "meta-train",
            Command::Tto { .. } => "tto",
            Command::Ablate { .. } => "ablate",
            Command::VizActivations { .. } => "viz-activations",
            Command::VizReconstruction { .. } => "viz-reconstruction",
            Command::Replay { .. } => "replay",
        }
    }

    fn common_mut(&mut self) -> Option<&mut Common> {
        match self {
            Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::MetaTrain { common, .. }
            | Command::Tto { common, .. }
            | Command::Ablate { common, .. }
            | Command::VizActivations { common, .. }
            | Command::VizReconstruction { common, .. } => Some(common),
            Command::Replay { .. } => None,
        }
    }
}

/// One hashed input of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub kind: String,
    pub path: Option<PathBuf>,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    /// Fully resolved config the command ran with.
    pub config: ExperimentConfig,
    pub inputs: Vec<InputHash>,
    /// SHA-256 over the config and every input hash.
    pub input_hash: String,
}

/// `sha256("blob <len>\0" ++ bytes)`, the git object hash over SHA-256.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex_digest(&h.finalize())
}

fn file_hash(kind: &str, path: &Path) -> Result<InputHash> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    Ok(InputHash {
        kind: kind.into(),
        path: Some(path.to_path_buf()),
        sha256: blob_hash(&bytes),
    })
}

impl Manifest {
    fn new(command: &Command, config: &ExperimentConfig, inputs: Vec<InputHash>) -> Self {
        let mut h = Sha256::new();
        h.update(blob_hash(config.to_json().as_bytes()).as_bytes());
        for i in &inputs {
            h.update(format!("\n{} {}", i.kind, i.sha256).as_bytes());
        }
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.clone(),
            config: config.clone(),
            inputs,
            input_hash: hex_digest(&h.finalize()),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(dir, MANIFEST, self)
    }
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value).expect("value serialises");
    std::fs::write(&path, text).map_err(Error::io(&path))
}

/// Caps the global rayon pool at `COMPOSER_INR_THREADS` workers when set.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    // A pool that is already initialised keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Config and hashed inputs for a command that starts from `--config`,
/// falling back to `default`.
fn fresh_config(common: &Common, default: fn() -> ExperimentConfig) -> Result<(ExperimentConfig, Vec<InputHash>)> {
    let (mut cfg, inputs) = match &common.config {
        Some(path) => (ExperimentConfig::load(path)?, vec![file_hash("config", path)?]),
        None => (default(), Vec::new()),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok((cfg, inputs))
}

fn require_checkpoint(common: &Common) -> Result<(Checkpoint, Vec<InputHash>)> {
    let path = common
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("this command needs --checkpoint".into()))?;
    Ok((Checkpoint::load(path)?, vec![file_hash("checkpoint", path)?]))
}

fn dataset_input(ds: &Dataset) -> InputHash {
    InputHash {
        kind: "dataset".into(),
        path: ds.spec.path.clone(),
        sha256: ds.hash(),
    }
}

fn load_model<T: Scalar>(ck: &Checkpoint) -> Result<Model<T>> {
    Model::from_checkpoint(ck)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from_args<I, S>(args: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    run(&cli.command)
}

pub fn run(command: &Command) -> Result<()> {
    init_threads()?;
    match command {
        Command::Replay { manifest, out } => replay(manifest, out.as_deref()),
        Command::Train { common, steps } | Command::MetaTrain { common, steps } => {
            let is_meta = matches!(command, Command::MetaTrain { .. });
            let default = if is_meta {
                ExperimentConfig::desk_meta_gratings
            } else {
                ExperimentConfig::desk_gratings
            };
            let (mut cfg, mut inputs) = fresh_config(common, default)?;
            if let Some(s) = steps {
                cfg.steps = *s;
            }
            if is_meta != matches!(cfg.predictor, Predictor::Meta(_)) {
                let want = if is_meta { "a meta" } else { "a hypernet" };
                return Err(Error::Config(format!(
                    "{} needs {want} predictor in the config",
                    command.name()
                )));
            }
            let ds = Dataset::build(&cfg.dataset)?;
            inputs.push(dataset_input(&ds));
            Manifest::new(command, &cfg, inputs).write(&common.out)?;
            write_json(&common.out, "dataset.json", &ds.manifest())?;
            match cfg.precision {
                Precision::F32 => run_train::<f32>(&cfg, &ds, &common.out),
                Precision::F64 => run_train::<f64>(&cfg, &ds, &common.out),
            }
        }
        Command::Eval { common, split } => {
            let split: Split = split.parse()?;
            let (ck, mut inputs) = require_checkpoint(common)?;
            let ds = Dataset::build(&ck.header.config.dataset)?;
            inputs.push(dataset_input(&ds));
            Manifest::new(command, &ck.header.config, inputs).write(&common.out)?;
            let report = match ck.header.config.precision {
                Precision::F32 => evaluate(&load_model::<f32>(&ck)?, &ds, split)?,
                Precision::F64 => evaluate(&load_model::<f64>(&ck)?, &ds, split)?,
            };
            let stem = format!("psnr-{}", report.split);
            report.write(&common.out, &stem)?;
            println!(
                "mean {} PSNR {:.2} dB over {} instances",
                report.split,
                report.mean_psnr,
                report.instances.len()
            );
            Ok(())
        }
        Command::Tto {
            common,
            scope,
            steps,
            lr,
            count,
        } => {
            let scope: TtoScope = scope.parse()?;
            let (ck, mut inputs) = require_checkpoint(common)?;
            let ds = Dataset::build(&ck.header.config.dataset)?;
            inputs.push(dataset_input(&ds));
            Manifest::new(command, &ck.header.config, inputs).write(&common.out)?;
            let mut cfg = TtoConfig {
                steps: *steps,
                scope,
                ..TtoConfig::default()
            };
            cfg.adam.lr = *lr;
            match ck.header.config.precision {
                Precision::F32 => run_tto(&load_model::<f32>(&ck)?, &ds, &cfg, *count, &common.out),
                Precision::F64 => run_tto(&load_model::<f64>(&ck)?, &ds, &cfg, *count, &common.out),
            }
        }
        Command::Ablate { common, axis, steps } => {
            let axis: Axis = axis.parse()?;
            let (mut cfg, mut inputs) = fresh_config(common, ExperimentConfig::desk_gratings)?;
            if let Some(s) = steps {
                cfg.steps = *s;
            }
            let ds = Dataset::build(&cfg.dataset)?;
            inputs.push(dataset_input(&ds));
            Manifest::new(command, &cfg, inputs).write(&common.out)?;
            let progress = |label: &str, step: usize, loss: f64| {
                if (step + 1).is_multiple_of(100) {
                    eprintln!("[{label}] step {:>6}  loss {loss:.6}", step + 1);
                }
            };
            let report = match cfg.precision {
                Precision::F32 => run_ablation::<f32>(&cfg, &ds, axis, Some(&common.out), Some(&progress), &[])?,
                Precision::F64 => run_ablation::<f64>(&cfg, &ds, axis, Some(&common.out), Some(&progress), &[])?,
            };
            print!("{}", report.to_table());
            Ok(())
        }
        Command::VizActivations { common, instance, k } => {
            let (ck, mut inputs) = require_checkpoint(common)?;
            let ds = Dataset::build(&ck.header.config.dataset)?;
            inputs.push(dataset_input(&ds));
            Manifest::new(command, &ck.header.config, inputs).write(&common.out)?;
            let signal = ds.instances.get(*instance).ok_or_else(|| {
                Error::Data(format!(
                    "instance {instance} out of range ({} instances)",
                    ds.instances.len()
                ))
            })?;
            let signal = ds.eval_view(*instance).unwrap_or_else(|_| signal.clone());
            let dir = common.out.join("activations");
            let files = match ck.header.config.precision {
                Precision::F32 => viz_activations(&load_model::<f32>(&ck)?, &signal, *k, &dir)?,
                Precision::F64 => viz_activations(&load_model::<f64>(&ck)?, &signal, *k, &dir)?,
            };
            write_json(&common.out, "activations.json", &files)?;
            println!(
                "wrote {} neuron maps and {}",
                files.neurons.len(),
                files.montage.display()
            );
            Ok(())
        }
        Command::VizReconstruction { common, instances } => {
            let (ck, mut inputs) = require_checkpoint(common)?;
            let ds = Dataset::build(&ck.header.config.dataset)?;
            inputs.push(dataset_input(&ds));
            Manifest::new(command, &ck.header.config, inputs).write(&common.out)?;
            let indices = if instances.is_empty() {
                ds.test.iter().take(8).copied().collect()
            } else {
                instances.clone()
            };
            let dir = common.out.join("reconstructions");
            let files = match ck.header.config.precision {
                Precision::F32 => viz_reconstruction(&load_model::<f32>(&ck)?, &ds, &indices, &dir)?,
                Precision::F64 => viz_reconstruction(&load_model::<f64>(&ck)?, &ds, &indices, &dir)?,
            };
            write_json(&common.out, "reconstructions.json", &files)?;
            for f in &files {
                println!("{}", f.path.display());
            }
            Ok(())
        }
    }
}

fn run_train<T: Scalar>(cfg: &ExperimentConfig, ds: &Dataset, out: &Path) -> Result<()> {
    let every = (cfg.steps / 20).max(1);
    let progress = |step: usize, loss: f64| {
        if (step + 1).is_multiple_of(every) {
            eprintln!("step {:>6}  loss {loss:.6}", step + 1);
        }
    };
    let opts = TrainOptions {
        out_dir: Some(out.to_path_buf()),
        progress: Some(&progress),
    };
    let (model, log): (Model<T>, TrainLog) = train(cfg, ds, &opts)?;
    model.save(&out.join("model.cinr"))?;
    write_json(out, "train-log.json", &log)?;
    let report = evaluate(&model, ds, Split::Test)?;
    report.write(out, "psnr-test")?;
    println!("trained {} steps; mean test PSNR {:.2} dB", cfg.steps, report.mean_psnr);
    Ok(())
}

#[derive(Serialize)]
struct TtoSummary<'a> {
    scope: TtoScope,
    steps: usize,
    mean_before_psnr: f64,
    mean_after_psnr: f64,
    instances: &'a [(usize, TtoReport)],
}

fn run_tto<T: Scalar>(model: &Model<T>, ds: &Dataset, cfg: &TtoConfig, count: usize, out: &Path) -> Result<()> {
    let picked: Vec<usize> = ds.test.iter().take(count).copied().collect();
    if picked.is_empty() {
        return Err(Error::Data("no test-split instances to refine".into()));
    }
    let reports = picked
        .iter()
        .map(|&i| Ok((i, crate::train::tto(model, &ds.eval_view(i)?, cfg)?.report)))
        .collect::<Result<Vec<_>>>()?;
    let summary = TtoSummary {
        scope: cfg.scope,
        steps: cfg.steps,
        mean_before_psnr: mean(reports.iter().map(|r| r.1.before_psnr)),
        mean_after_psnr: mean(reports.iter().map(|r| r.1.after_psnr)),
        instances: &reports,
    };
    write_json(out, "tto-report.json", &summary)?;
    println!(
        "TTO ({:?}, {} steps) on {} instances: {:.2} -> {:.2} dB",
        cfg.scope,
        cfg.steps,
        reports.len(),
        summary.mean_before_psnr,
        summary.mean_after_psnr
    );
    Ok(())
}

/// Re-runs the command recorded in `manifest_path` with the recorded config.
pub fn replay(manifest_path: &Path, out: Option<&Path>) -> Result<()> {
    let manifest = Manifest::load(manifest_path)?;
    let mut command = manifest.command.clone();
    let common = command
        .common_mut()
        .ok_or_else(|| Error::Config("a manifest cannot record a replay".into()))?;
    for input in manifest.inputs.iter().filter(|i| i.kind == "checkpoint") {
        let path = input
            .path
            .as_ref()
            .ok_or_else(|| Error::Config("checkpoint input without a path".into()))?;
        let now = file_hash("checkpoint", path)?;
        if now.sha256 != input.sha256 {
            return Err(Error::Data(format!(
                "checkpoint {} changed since the manifest was written",
                path.display()
            )));
        }
    }
    if let Some(out) = out {
        common.out = out.to_path_buf();
    }
    if common.checkpoint.is_none() {
        let path = common.out.join("replay-config.json");
        std::fs::create_dir_all(&common.out).map_err(Error::io(&common.out))?;
        std::fs::write(&path, manifest.config.to_json()).map_err(Error::io(&path))?;
        common.config = Some(path);
        common.seed = None;
    }
    match &mut command {
        Command::Train { steps, .. } | Command::MetaTrain { steps, .. } | Command::Ablate { steps, .. } => {
            *steps = None
        }
        _ => {}
    }
    run(&command)
}
