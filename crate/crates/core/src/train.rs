//! Training loops, evaluation and test-time optimization.

use std::path::{Path, PathBuf};

use composer_autodiff::nn::mse;
use composer_autodiff::{GradMode, Graph, Scalar, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{Model, PredictorState};
use crate::config::{AdamConfig, ExperimentConfig, MlpConfig, Predictor};
use crate::data::{fraction_count, gather_rows, grid, subsample_indices, Dataset, Signal, Split};
use crate::error::{Error, Result};
use crate::meta::{MetaLearner, Task};
use crate::metrics::{psnr, InstanceScore, PsnrReport};
use crate::model::{forward_features, ComposerMatrix, SharedParams};
use crate::params::{accumulate, zeros_like, Adam, Params};
use crate::tokenize::tokenize;

/// SplitMix64 finaliser used to derive independent per-step seeds.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut z = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Side effects of a training run.
#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Directory for periodic and last-good checkpoints.
    pub out_dir: Option<PathBuf>,
    /// Called after every step with `(step, loss)`.
    pub progress: Option<&'a (dyn Fn(usize, f64) + Sync)>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean batch loss per step.
    pub losses: Vec<f64>,
    pub checkpoints: Vec<PathBuf>,
}

/// Cycles through shuffled epochs of the training split.
struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(indices: &[usize], seed: u64) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        let mut s = Self {
            order: indices.to_vec(),
            pos: indices.len(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.order.sort_unstable();
        Ok(s)
    }

    fn next(&mut self, n: usize) -> Vec<usize> {
        (0..n)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("checkpoint-{step:06}.cinr"))
}

fn diverged<T: Scalar>(model: &Model<T>, step: usize, opts: &TrainOptions) -> Error {
    let last_good = opts.out_dir.as_ref().and_then(|dir| {
        let path = dir.join("last-good.cinr");
        model.save(&path).ok().map(|_| path)
    });
    Error::Diverged { step, last_good }
}

fn is_numeric_failure(e: &Error) -> bool {
    matches!(e, Error::NonFinite(_))
}

/// Coordinates kept for instance slot `slot` at `step`.
fn step_rows(cfg: &ExperimentConfig, m: usize, step: usize, slot: usize) -> Result<Vec<usize>> {
    let count = fraction_count(m, cfg.subsample)?;
    subsample_indices(m, count, mix_seed(&[cfg.seed, step as u64, slot as u64, 1]))
}

/// Minimises the mean per-instance loss over the training split with Adam.
pub fn train<T: Scalar>(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    opts: &TrainOptions,
) -> Result<(Model<T>, TrainLog)> {
    match &cfg.predictor {
        Predictor::Hypernet(_) => train_hypernet(cfg, dataset, opts),
        Predictor::Meta(_) => train_meta(cfg, dataset, opts),
    }
}

/// End-to-end training of the transformer hypernetwork and the shared MLP.
pub fn train_hypernet<T: Scalar>(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    opts: &TrainOptions,
) -> Result<(Model<T>, TrainLog)> {
    let Predictor::Hypernet(hc) = &cfg.predictor else {
        return Err(Error::Config("train_hypernet needs a hypernet predictor".into()));
    };
    let (dims, channels) = dataset.geometry();
    let mut model = Model::<T>::init(cfg, &dims, channels)?;
    let gamma_full = model.grid_features()?;
    let m = gamma_full.shape()[0];
    let mut adam = Adam::new(cfg.optimizer.clone());
    let mut sampler = BatchSampler::new(&dataset.train, mix_seed(&[cfg.seed, 7]))?;
    let mut log = TrainLog::default();

    for step in 0..cfg.steps {
        let batch = sampler.next(cfg.batch_size);
        let PredictorState::Hypernet(net) = &model.predictor else {
            unreachable!()
        };
        let shared = &model.shared;
        let per_instance: Vec<Result<(f64, Vec<Tensor<T>>)>> = batch
            .par_iter()
            .enumerate()
            .map(|(slot, &idx)| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, step as u64, slot as u64, 2]));
                let view = dataset.train_view(idx, &mut rng)?;
                let rows = step_rows(cfg, m, step, slot)?;
                let gamma = gather_rows(&gamma_full, &rows)?;
                let targets = gather_rows(&view.targets::<T>()?, &rows)?;
                let g = Graph::new();
                let s = shared.bind(&g);
                let h = net.bind(&g);
                let composer = h.predict(&tokenize(&hc.tokenizer, &view)?)?;
                let loss = mse(&forward_features(&s, &composer, &gamma, false)?.output, &targets)?;
                let wrt: Vec<&Tensor<T>> = s.tensors().into_iter().chain(h.tensors()).collect();
                let grads = g.grad(&loss, &wrt, GradMode::Detached)?;
                Ok((loss.item()?.as_f64(), grads))
            })
            .collect();

        let mut refs = shared.tensors();
        refs.extend(net.tensors());
        let mut acc = zeros_like(&refs);
        let mut loss = 0.0;
        for r in per_instance {
            match r {
                Ok((l, g)) => {
                    loss += l;
                    accumulate(&mut acc, &g);
                }
                Err(e) if is_numeric_failure(&e) => return Err(diverged(&model, step, opts)),
                Err(e) => return Err(e),
            }
        }
        loss /= batch.len() as f64;
        let inv = T::from_f64(1.0 / batch.len() as f64);
        acc.iter_mut().flatten().for_each(|x| *x = *x * inv);
        if !loss.is_finite() || acc.iter().flatten().any(|x| !x.is_finite()) {
            return Err(diverged(&model, step, opts));
        }
        let Model { shared, predictor, .. } = &mut model;
        let PredictorState::Hypernet(net) = predictor else {
            unreachable!()
        };
        let mut params: Vec<&mut Tensor<T>> = shared.params_mut().into_iter().map(|(_, t)| t).collect();
        params.extend(net.params_mut().into_iter().map(|(_, t)| t));
        adam.step(params, &acc)?;
        model.step = step + 1;
        log.losses.push(loss);
        if let Some(f) = opts.progress {
            f(step, loss);
        }
        save_periodic(&model, cfg, opts, &mut log)?;
    }
    Ok((model, log))
}

fn save_periodic<T: Scalar>(
    model: &Model<T>,
    cfg: &ExperimentConfig,
    opts: &TrainOptions,
    log: &mut TrainLog,
) -> Result<()> {
    if let Some(dir) = &opts.out_dir {
        if cfg.checkpoint_every > 0 && model.step.is_multiple_of(cfg.checkpoint_every) {
            let path = checkpoint_path(dir, model.step);
            model.save(&path)?;
            log.checkpoints.push(path);
        }
    }
    Ok(())
}

/// Meta-training of `θ` and the composer initialization.
pub fn train_meta<T: Scalar>(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    opts: &TrainOptions,
) -> Result<(Model<T>, TrainLog)> {
    let Predictor::Meta(mc) = &cfg.predictor else {
        return Err(Error::Config("train_meta needs a meta predictor".into()));
    };
    let (dims, channels) = dataset.geometry();
    let mut model = Model::<T>::init(cfg, &dims, channels)?;
    let gamma_full = model.grid_features()?;
    let m = gamma_full.shape()[0];
    let PredictorState::Meta(init) = &model.predictor else {
        unreachable!()
    };
    let mut learner = MetaLearner::new(mc.clone(), model.shared.clone(), init.clone(), &cfg.optimizer)?;
    let mut sampler = BatchSampler::new(&dataset.train, mix_seed(&[cfg.seed, 7]))?;
    let mut log = TrainLog::default();

    for step in 0..cfg.steps {
        let batch = sampler.next(mc.batch_size);
        let tasks = batch
            .iter()
            .enumerate()
            .map(|(slot, &idx)| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, step as u64, slot as u64, 2]));
                let view = dataset.train_view(idx, &mut rng)?;
                let rows = step_rows(cfg, m, step, slot)?;
                let gamma = gather_rows(&gamma_full, &rows)?;
                let targets = gather_rows(&view.targets::<T>()?, &rows)?;
                Ok(Task {
                    support_gamma: gamma.clone(),
                    support_targets: targets.clone(),
                    query_gamma: gamma,
                    query_targets: targets,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let stats = match learner.outer_step(&tasks) {
            Ok(s) => s,
            Err(e) if is_numeric_failure(&e) => return Err(diverged(&model, step, opts)),
            Err(e) => return Err(e),
        };
        if !stats.loss.is_finite() {
            return Err(diverged(&model, step, opts));
        }
        model.shared = learner.shared.clone();
        model.predictor = PredictorState::Meta(learner.init.clone());
        model.step = step + 1;
        log.losses.push(stats.loss);
        if let Some(f) = opts.progress {
            f(step, stats.loss);
        }
        save_periodic(&model, cfg, opts, &mut log)?;
    }
    Ok((model, log))
}

/// Full-grid PSNR of every instance in `split`.
pub fn evaluate<T: Scalar>(model: &Model<T>, dataset: &Dataset, split: Split) -> Result<PsnrReport> {
    let gamma = model.grid_features()?;
    let indices = dataset.split(split);
    let scores = indices
        .par_iter()
        .map(|&idx| {
            let view = dataset.eval_view(idx)?;
            let pred = model.reconstruct(&view, &gamma)?;
            let mse = crate::metrics::metric_mse(&pred, &view.data)?;
            Ok(InstanceScore {
                index: idx,
                name: dataset.names[idx].clone(),
                mse,
                psnr: psnr(&pred, &view.data)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let split = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    Ok(PsnrReport::new(dataset.hash(), model.id(), split.into(), scores))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TtoScope {
    ComposerOnly,
    AllWeights,
}

impl std::str::FromStr for TtoScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "composer_only" | "composer-only" => Ok(TtoScope::ComposerOnly),
            "all_weights" | "all-weights" => Ok(TtoScope::AllWeights),
            other => Err(Error::Config(format!("unknown TTO scope {other:?}"))),
        }
    }
}

/// Test-time optimization settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TtoConfig {
    pub steps: usize,
    pub scope: TtoScope,
    pub adam: AdamConfig,
    /// Step-size halvings tried before a step is skipped.
    pub max_backtracks: usize,
}

impl Default for TtoConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            scope: TtoScope::ComposerOnly,
            adam: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            max_backtracks: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TtoReport {
    pub scope: TtoScope,
    pub steps: usize,
    pub before_psnr: f64,
    pub after_psnr: f64,
    /// Full-grid loss after each accepted or skipped step (index 0 is the start).
    pub losses: Vec<f64>,
    pub rejected: usize,
    /// Steps where every trial raised the loss.
    pub skipped: usize,
}

/// Result of [`tto`]: the refined parameters plus a report.
#[derive(Debug, Clone)]
pub struct TtoOutcome<T: Scalar> {
    pub shared: SharedParams<T>,
    pub composer: ComposerMatrix<T>,
    pub report: TtoReport,
}

fn loss_and_grads<T: Scalar>(
    shared: &SharedParams<T>,
    composer: &ComposerMatrix<T>,
    scope: TtoScope,
    gamma: &Tensor<T>,
    targets: &Tensor<T>,
) -> Result<(f64, Vec<Tensor<T>>, Vec<f64>)> {
    let g = Graph::new();
    let c = composer.bind(&g);
    let s = match scope {
        TtoScope::AllWeights => shared.bind(&g),
        TtoScope::ComposerOnly => shared.detached(),
    };
    let pred = forward_features(&s, &c, gamma, false)?.output;
    let loss = mse(&pred, targets)?;
    let mut wrt: Vec<&Tensor<T>> = c.tensors();
    if scope == TtoScope::AllWeights {
        wrt.extend(s.tensors());
    }
    let grads = g.grad(&loss, &wrt, GradMode::Detached)?;
    Ok((loss.item()?.as_f64(), grads, pred.to_f64_vec()))
}

/// Refines the predicted parameters of one instance on its full grid with
/// guarded Adam: a step that raises the loss is undone and retried at half
/// the step size, so the loss (and PSNR) never decreases.
pub fn tto<T: Scalar>(model: &Model<T>, signal: &Signal, cfg: &TtoConfig) -> Result<TtoOutcome<T>> {
    let gamma = model.grid_features()?;
    let (shared, composer) = model.instance_params(signal, &gamma)?;
    refine(shared, composer, signal, &gamma, cfg)
}

/// Fits a freshly initialised MLP to one instance by itself, updating every
/// weight. `gamma` must be the full-grid features of `mlp.fourier`.
pub fn fit_single_instance<T: Scalar>(
    mlp: &MlpConfig,
    signal: &Signal,
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<TtoOutcome<T>> {
    let shared = SharedParams::init(mlp, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 3]));
    let composer = ComposerMatrix::random(mlp, &mut rng)?;
    let gamma = shared.fourier.encode(&grid(&signal.dims)?)?;
    let cfg = TtoConfig {
        steps,
        scope: TtoScope::AllWeights,
        adam: AdamConfig {
            lr,
            ..AdamConfig::default()
        },
        max_backtracks: 8,
    };
    refine(shared, composer, signal, &gamma, &cfg)
}

fn refine<T: Scalar>(
    mut shared: SharedParams<T>,
    mut composer: ComposerMatrix<T>,
    signal: &Signal,
    gamma: &Tensor<T>,
    cfg: &TtoConfig,
) -> Result<TtoOutcome<T>> {
    let gamma = gamma.clone();
    let targets = signal.targets::<T>()?;
    let mut adam = Adam::new(cfg.adam.clone());
    let (mut loss, mut grads, pred) = loss_and_grads(&shared, &composer, cfg.scope, &gamma, &targets)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("test-time optimization loss".into()));
    }
    let before_psnr = psnr(&pred, &signal.data)?;
    let mut after_psnr = before_psnr;
    let mut losses = vec![loss];
    let mut rejected = 0;
    let mut skipped = 0;
    for _ in 0..cfg.steps {
        let grad_data: Vec<Vec<T>> = grads.iter().map(Tensor::to_vec).collect();
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=cfg.max_backtracks {
            let mut trial_adam = adam.clone();
            trial_adam.cfg.lr = cfg.adam.lr * scale;
            let (mut s, mut c) = (shared.clone(), composer.clone());
            let mut params: Vec<&mut Tensor<T>> = c.params_mut().into_iter().map(|(_, t)| t).collect();
            if cfg.scope == TtoScope::AllWeights {
                params.extend(s.params_mut().into_iter().map(|(_, t)| t));
            }
            trial_adam.step(params, &grad_data)?;
            let (l, g, p) = match loss_and_grads(&s, &c, cfg.scope, &gamma, &targets) {
                Ok(v) => v,
                Err(Error::NonFinite(_)) => {
                    rejected += 1;
                    scale *= 0.5;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if l.is_finite() && l <= loss {
                trial_adam.cfg.lr = cfg.adam.lr;
                adam = trial_adam;
                (shared, composer, loss, grads) = (s, c, l, g);
                after_psnr = psnr(&p, &signal.data)?;
                accepted = true;
                break;
            }
            rejected += 1;
            scale *= 0.5;
        }
        if !accepted {
            skipped += 1;
        }
        losses.push(loss);
    }
    Ok(TtoOutcome {
        shared,
        composer,
        report: TtoReport {
            scope: cfg.scope,
            steps: cfg.steps,
            before_psnr,
            after_psnr,
            losses,
            rejected,
            skipped,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{DatasetKind, DatasetSpec, TransformerConfig};

    pub(crate) fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::desk_gratings();
        cfg.model.hidden = 16;
        cfg.model.rank = 8;
        cfg.model.fourier.d_f = 16;
        if let Predictor::Hypernet(h) = &mut cfg.predictor {
            h.transformer = TransformerConfig {
                blocks: 1,
                heads: 2,
                head_dim: 8,
                d_model: 16,
                max_tokens: 16,
                ff_mult: 2,
            };
        }
        cfg.steps = 3;
        cfg.batch_size = 2;
        cfg.dataset = DatasetSpec {
            kind: DatasetKind::SyntheticGratings,
            path: None,
            count: 6,
            train: 4,
            resolution: 8,
            sample_rate: 16_000,
            seed: 0,
        };
        cfg
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = tiny_config();
        let ds = Dataset::build(&cfg.dataset).unwrap();
        let (a, la) = train::<f32>(&cfg, &ds, &TrainOptions::default()).unwrap();
        let (b, lb) = train::<f32>(&cfg, &ds, &TrainOptions::default()).unwrap();
        assert_eq!(la.losses.len(), 3);
        assert_eq!(la.losses[0].to_bits(), lb.losses[0].to_bits());
        assert_eq!(
            evaluate(&a, &ds, Split::Test).unwrap(),
            evaluate(&b, &ds, Split::Test).unwrap()
        );
    }

    #[test]
    fn zero_step_tto_is_identity() {
        let cfg = tiny_config();
        let ds = Dataset::build(&cfg.dataset).unwrap();
        let model = Model::<f64>::init(&cfg, &[8, 8], 1).unwrap();
        let out = tto(
            &model,
            &ds.instances[0],
            &TtoConfig {
                steps: 0,
                ..TtoConfig::default()
            },
        )
        .unwrap();
        assert_eq!(out.report.before_psnr, out.report.after_psnr);
    }

    #[test]
    fn tto_loss_is_monotone() {
        let cfg = tiny_config();
        let ds = Dataset::build(&cfg.dataset).unwrap();
        let model = Model::<f64>::init(&cfg, &[8, 8], 1).unwrap();
        for scope in [TtoScope::ComposerOnly, TtoScope::AllWeights] {
            let out = tto(
                &model,
                &ds.instances[1],
                &TtoConfig {
                    steps: 15,
                    scope,
                    adam: AdamConfig {
                        lr: 0.05,
                        ..AdamConfig::default()
                    },
                    max_backtracks: 4,
                },
            )
            .unwrap();
            assert!(out.report.losses.windows(2).all(|w| w[1] <= w[0]));
            assert!(out.report.after_psnr >= out.report.before_psnr);
        }
    }

    #[test]
    fn meta_training_runs() {
        let mut cfg = tiny_config();
        cfg.predictor = Predictor::Meta(crate::config::MetaConfig {
            batch_size: 2,
            ..Default::default()
        });
        let ds = Dataset::build(&cfg.dataset).unwrap();
        let (model, log) = train::<f64>(&cfg, &ds, &TrainOptions::default()).unwrap();
        assert_eq!(log.losses.len(), 3);
        assert!(evaluate(&model, &ds, Split::Test).unwrap().mean_psnr.is_finite());
    }

    #[test]
    fn divergence_saves_last_good() {
        let mut cfg = tiny_config();
        cfg.optimizer.lr = 1e30;
        cfg.steps = 20;
        let ds = Dataset::build(&cfg.dataset).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let opts = TrainOptions {
            out_dir: Some(dir.path().to_path_buf()),
            progress: None,
        };
        match train::<f32>(&cfg, &ds, &opts) {
            Err(Error::Diverged { last_good: Some(p), .. }) => assert!(p.exists()),
            other => panic!("{:?}", other.map(|(_, l)| l.losses)),
        }
    }
}
