//! Optimization-based prediction of the composer.
//!
//! The inner loop adapts `φ⁽ⁿ⁾` (the composer, starting from a learned
//! initialization `φ`) with steps scaled by `ε‖φ⁽ⁿ⁾‖²`; the outer loop trains
//! both `θ` and `φ` through the adapted parameters. The MAML baseline instead
//! adapts every MLP weight with plain steps.

use composer_autodiff::nn::mse;
use composer_autodiff::{GradMode, Graph, Scalar, Tensor};

use crate::config::{AdamConfig, MetaConfig, MetaMode, OuterOptimizer};
use crate::error::{Error, Result};
use crate::model::{forward_features, ComposerMatrix, SharedParams};
use crate::params::{accumulate, zeros_like, Adam, Optimizer, Params, Sgd};

/// How gradients flow through the inner updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerGrad {
    /// Updates are recorded so the outer gradient includes second-order terms.
    SecondOrder,
    /// The update is added as a constant; gradients pass straight through.
    FirstOrder,
}

/// Outcome of an inner loop: adapted tensors and `L_n` before each step
/// plus after the last one.
#[derive(Debug, Clone)]
pub struct Adapted<T: Scalar> {
    pub tensors: Vec<Tensor<T>>,
    pub losses: Vec<f64>,
}

/// `steps` gradient steps `p ← p − lr·s·∇L`, where `s = Σ‖p‖²` over the
/// adapted tensors when `scale_by_norm` and `1` otherwise.
///
/// Attached tensors must share one graph and keep their link to it; detached
/// tensors are adapted on throw-away graphs and returned detached.
pub fn adapt<T: Scalar>(
    tensors: Vec<Tensor<T>>,
    loss_fn: impl Fn(&[Tensor<T>]) -> Result<Tensor<T>>,
    steps: usize,
    lr: f64,
    scale_by_norm: bool,
    order: InnerGrad,
) -> Result<Adapted<T>> {
    let attached = tensors.iter().find_map(|t| t.graph().cloned());
    let mut current = tensors;
    let mut losses = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let (graph, params) = match &attached {
            Some(g) => (g.clone(), current.clone()),
            None => {
                let g = Graph::new();
                let p = current.iter().map(|t| g.leaf(t)).collect();
                (g, p)
            }
        };
        let loss = loss_fn(&params)?;
        let value = loss.item()?.as_f64();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("inner-loop loss at step {step}")));
        }
        losses.push(value);
        if step == steps {
            break;
        }
        let refs: Vec<&Tensor<T>> = params.iter().collect();
        let second = attached.is_some() && order == InnerGrad::SecondOrder;
        let mode = if second {
            GradMode::CreateGraph
        } else {
            GradMode::Detached
        };
        let grads = graph.grad(&loss, &refs, mode)?;
        let lr_t = T::from_f64(lr);
        current = if second {
            let mut scale = Tensor::scalar(lr_t);
            if scale_by_norm {
                let mut norm = Tensor::scalar(T::zero());
                for p in &params {
                    norm = norm.add(&p.mul(p)?.sum_all()?)?;
                }
                scale = norm.scale(lr_t)?;
            }
            params
                .iter()
                .zip(&grads)
                .map(|(p, g)| Ok(p.sub(&g.mul(&scale)?)?))
                .collect::<Result<_>>()?
        } else {
            let s = if scale_by_norm {
                params
                    .iter()
                    .flat_map(|p| p.data().iter())
                    .fold(T::zero(), |a, &x| a + x * x)
            } else {
                T::one()
            };
            let step_size = lr_t * s;
            params
                .iter()
                .zip(&grads)
                .map(|(p, g)| {
                    let delta = g.detach().scale(step_size)?;
                    Ok(if attached.is_some() {
                        p.sub(&delta)?
                    } else {
                        p.detach().sub(&delta)?
                    })
                })
                .collect::<Result<_>>()?
        };
    }
    Ok(Adapted {
        tensors: current,
        losses,
    })
}

fn order_of(mode: MetaMode) -> InnerGrad {
    match mode {
        MetaMode::FirstOrderApprox => InnerGrad::FirstOrder,
        MetaMode::CaviaComposer | MetaMode::MamlAllWeights => InnerGrad::SecondOrder,
    }
}

fn composer_from<T: Scalar>(template: &ComposerMatrix<T>, tensors: &[Tensor<T>]) -> ComposerMatrix<T> {
    let mut c = template.clone();
    for ((_, slot), t) in c.params_mut().into_iter().zip(tensors) {
        *slot = t.clone();
    }
    c
}

/// Composer-only inner loop: `φ⁽ⁿ⁾ ← φ⁽ⁿ⁾ − ε‖φ⁽ⁿ⁾‖²∇L_n`.
///
/// `gamma` and `targets` are the instance's Fourier features and values.
/// `shared` is left untouched.
pub fn inner_adapt<T: Scalar>(
    shared: &SharedParams<T>,
    init: &ComposerMatrix<T>,
    gamma: &Tensor<T>,
    targets: &Tensor<T>,
    steps: usize,
    lr: f64,
    order: InnerGrad,
) -> Result<(ComposerMatrix<T>, Vec<f64>)> {
    let tensors: Vec<Tensor<T>> = init.tensors().into_iter().cloned().collect();
    let loss_fn = |p: &[Tensor<T>]| -> Result<Tensor<T>> {
        let c = composer_from(init, p);
        Ok(mse(&forward_features(shared, &c, gamma, false)?.output, targets)?)
    };
    let out = adapt(tensors, loss_fn, steps, lr, true, order)?;
    Ok((composer_from(init, &out.tensors), out.losses))
}

/// MAML baseline: every MLP parameter (shared weights and composer) takes
/// `steps` plain gradient steps.
pub fn maml_adapt_all<T: Scalar>(
    shared: &SharedParams<T>,
    composer: &ComposerMatrix<T>,
    gamma: &Tensor<T>,
    targets: &Tensor<T>,
    steps: usize,
    lr: f64,
    order: InnerGrad,
) -> Result<(SharedParams<T>, ComposerMatrix<T>, Vec<f64>)> {
    let n_shared = shared.params().len();
    let tensors: Vec<Tensor<T>> = shared
        .tensors()
        .into_iter()
        .chain(composer.tensors())
        .cloned()
        .collect();
    let rebuild = |p: &[Tensor<T>]| {
        let mut s = shared.clone();
        for ((_, slot), t) in s.params_mut().into_iter().zip(&p[..n_shared]) {
            *slot = t.clone();
        }
        (s, composer_from(composer, &p[n_shared..]))
    };
    let loss_fn = |p: &[Tensor<T>]| -> Result<Tensor<T>> {
        let (s, c) = rebuild(p);
        Ok(mse(&forward_features(&s, &c, gamma, false)?.output, targets)?)
    };
    let out = adapt(tensors, loss_fn, steps, lr, false, order)?;
    let (s, c) = rebuild(&out.tensors);
    Ok((s, c, out.losses))
}

/// One instance inside an outer step.
#[derive(Debug, Clone)]
pub struct Task<T: Scalar> {
    /// Features and targets used by the inner loop.
    pub support_gamma: Tensor<T>,
    pub support_targets: Tensor<T>,
    /// Features and targets of the outer loss (usually the same coordinates).
    pub query_gamma: Tensor<T>,
    pub query_targets: Tensor<T>,
}

/// Meta-learned state: shared MLP parameters and the composer initialization.
#[derive(Debug, Clone)]
pub struct MetaLearner<T: Scalar> {
    pub config: MetaConfig,
    pub shared: SharedParams<T>,
    pub init: ComposerMatrix<T>,
    optimizer: Optimizer<T>,
}

/// Per-step statistics of [`MetaLearner::outer_step`].
#[derive(Debug, Clone)]
pub struct OuterStats {
    /// Mean outer loss at the adapted parameters.
    pub loss: f64,
    /// Mean inner loss before adaptation.
    pub pre_adapt_loss: f64,
    pub max_graph_bytes: usize,
}

impl<T: Scalar> MetaLearner<T> {
    pub fn new(
        config: MetaConfig,
        shared: SharedParams<T>,
        init: ComposerMatrix<T>,
        adam: &AdamConfig,
    ) -> Result<Self> {
        config.validate()?;
        let optimizer = match config.outer_optimizer {
            OuterOptimizer::Sgd => Optimizer::Sgd(Sgd { lr: config.outer_lr }),
            OuterOptimizer::Adam => Optimizer::Adam(Adam::new(AdamConfig {
                lr: config.outer_lr,
                ..adam.clone()
            })),
        };
        Ok(Self {
            config,
            shared,
            init,
            optimizer,
        })
    }

    /// Loss and gradients (in `shared` then `init` parameter order) of one task.
    pub fn task_gradients(&self, task: &Task<T>) -> Result<(f64, f64, Vec<Tensor<T>>, usize)> {
        let cfg = &self.config;
        let g = Graph::new();
        let shared = self.shared.bind(&g);
        let init = self.init.bind(&g);
        let order = order_of(cfg.mode);
        let (s_adapted, c_adapted, losses) = match cfg.mode {
            MetaMode::MamlAllWeights => maml_adapt_all(
                &shared,
                &init,
                &task.support_gamma,
                &task.support_targets,
                cfg.inner_steps,
                cfg.inner_lr,
                order,
            )?,
            MetaMode::CaviaComposer | MetaMode::FirstOrderApprox => {
                let (c, l) = inner_adapt(
                    &shared,
                    &init,
                    &task.support_gamma,
                    &task.support_targets,
                    cfg.inner_steps,
                    cfg.inner_lr,
                    order,
                )?;
                (shared.clone(), c, l)
            }
        };
        let pred = forward_features(&s_adapted, &c_adapted, &task.query_gamma, false)?.output;
        let loss = mse(&pred, &task.query_targets)?;
        let bytes = g.bytes_retained();
        if let Some(budget) = cfg.max_graph_bytes {
            if bytes > budget && cfg.mode != MetaMode::FirstOrderApprox {
                return Err(Error::MemoryBudget { used: bytes, budget });
            }
        }
        let value = loss.item()?.as_f64();
        if !value.is_finite() {
            return Err(Error::NonFinite("outer loss".into()));
        }
        let wrt: Vec<&Tensor<T>> = shared.tensors().into_iter().chain(init.tensors()).collect();
        let grads = g.grad(&loss, &wrt, GradMode::Detached)?;
        Ok((value, losses[0], grads, bytes))
    }

    /// One outer update of `θ` and `φ` on a batch of tasks, reduced in order.
    pub fn outer_step(&mut self, tasks: &[Task<T>]) -> Result<OuterStats> {
        use rayon::prelude::*;
        if tasks.is_empty() {
            return Err(Error::Data("outer step needs at least one task".into()));
        }
        let results: Vec<_> = tasks
            .par_iter()
            .map(|t| self.task_gradients(t))
            .collect::<Result<_>>()?;
        let mut refs: Vec<&Tensor<T>> = self.shared.tensors();
        refs.extend(self.init.tensors());
        let mut acc = zeros_like(&refs);
        let (mut loss, mut pre, mut bytes) = (0.0, 0.0, 0);
        for (l, p, g, b) in &results {
            accumulate(&mut acc, g);
            loss += l;
            pre += p;
            bytes = bytes.max(*b);
        }
        let inv = T::from_f64(1.0 / tasks.len() as f64);
        for a in &mut acc {
            for x in a.iter_mut() {
                *x = *x * inv;
            }
        }
        let mut params: Vec<&mut Tensor<T>> = self.shared.params_mut().into_iter().map(|(_, t)| t).collect();
        params.extend(self.init.params_mut().into_iter().map(|(_, t)| t));
        self.optimizer.step(params, &acc)?;
        let n = tasks.len() as f64;
        Ok(OuterStats {
            loss: loss / n,
            pre_adapt_loss: pre / n,
            max_graph_bytes: bytes,
        })
    }

    /// Test-time inner loop from the learned initialization (no outer graph).
    pub fn adapt(&self, gamma: &Tensor<T>, targets: &Tensor<T>) -> Result<(ComposerMatrix<T>, Vec<f64>)> {
        let shared = self.shared.detached();
        let init = self.init.detached();
        match self.config.mode {
            MetaMode::MamlAllWeights => Err(Error::Config(
                "maml_all_weights adapts the shared weights too; use adapt_all".into(),
            )),
            _ => inner_adapt(
                &shared,
                &init,
                gamma,
                targets,
                self.config.inner_steps,
                self.config.inner_lr,
                InnerGrad::FirstOrder,
            ),
        }
    }

    /// Test-time adaptation for either mode, returning adapted shared weights too.
    pub fn adapt_all(
        &self,
        gamma: &Tensor<T>,
        targets: &Tensor<T>,
    ) -> Result<(SharedParams<T>, ComposerMatrix<T>, Vec<f64>)> {
        let shared = self.shared.detached();
        let init = self.init.detached();
        match self.config.mode {
            MetaMode::MamlAllWeights => maml_adapt_all(
                &shared,
                &init,
                gamma,
                targets,
                self.config.inner_steps,
                self.config.inner_lr,
                InnerGrad::FirstOrder,
            ),
            _ => {
                let (c, l) = self.adapt(gamma, targets)?;
                Ok((shared, c, l))
            }
        }
    }
}
