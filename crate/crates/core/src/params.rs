//! Named parameter traversal and first-order optimizers.

use composer_autodiff::{Graph, Scalar, Tensor};

use crate::config::AdamConfig;
use crate::error::{Error, Result};

/// A structure holding trainable tensors in a fixed traversal order.
pub trait Params<T: Scalar>: Clone {
    fn params(&self) -> Vec<(String, &Tensor<T>)>;

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)>;

    /// A copy whose parameters are fresh leaves of `graph`.
    fn bind(&self, graph: &Graph<T>) -> Self {
        let mut out = self.clone();
        for (_, t) in out.params_mut() {
            *t = graph.leaf(t);
        }
        out
    }

    /// A copy with every parameter detached.
    fn detached(&self) -> Self {
        let mut out = self.clone();
        for (_, t) in out.params_mut() {
            *t = t.detach();
        }
        out
    }

    fn tensors(&self) -> Vec<&Tensor<T>> {
        self.params().into_iter().map(|(_, t)| t).collect()
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Element-wise `acc += g`; used to reduce per-instance gradients in a fixed order.
pub fn accumulate<T: Scalar>(acc: &mut [Vec<T>], grads: &[Tensor<T>]) {
    for (a, g) in acc.iter_mut().zip(grads) {
        for (x, &y) in a.iter_mut().zip(g.data()) {
            *x = *x + y;
        }
    }
}

pub fn zeros_like<T: Scalar>(tensors: &[&Tensor<T>]) -> Vec<Vec<T>> {
    tensors.iter().map(|t| vec![T::zero(); t.numel()]).collect()
}

/// Replaces each parameter with `p - step(i, g)`.
fn apply<T: Scalar>(
    params: Vec<&mut Tensor<T>>,
    grads: &[Vec<T>],
    mut update: impl FnMut(usize, usize, T, T) -> T,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Config(format!(
            "optimizer got {} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
        let data: Vec<T> = p
            .data()
            .iter()
            .zip(g)
            .enumerate()
            .map(|(j, (&x, &gx))| update(i, j, x, gx))
            .collect();
        *p = Tensor::from_vec(p.shape(), data)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn step<T: Scalar>(&mut self, params: Vec<&mut Tensor<T>>, grads: &[Vec<T>]) -> Result<()> {
        let lr = T::from_f64(self.lr);
        apply(params, grads, |_, _, x, g| x - lr * g)
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: Vec<&mut Tensor<T>>, grads: &[Vec<T>]) -> Result<()> {
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![T::zero(); g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let (b1, b2) = (T::from_f64(b1), T::from_f64(b2));
        let lr = T::from_f64(self.cfg.lr * c2.sqrt() / c1);
        let eps = T::from_f64(self.cfg.eps * c2.sqrt());
        let (m, v) = (&mut self.m, &mut self.v);
        apply(params, grads, |i, j, x, g| {
            let mi = b1 * m[i][j] + (T::one() - b1) * g;
            let vi = b2 * v[i][j] + (T::one() - b2) * g * g;
            m[i][j] = mi;
            v[i][j] = vi;
            x - lr * mi / (vi.sqrt() + eps)
        })
    }
}

/// Outer-loop optimizer choice.
#[derive(Debug, Clone)]
pub enum Optimizer<T> {
    Sgd(Sgd),
    Adam(Adam<T>),
}

impl<T: Scalar> Optimizer<T> {
    pub fn step(&mut self, params: Vec<&mut Tensor<T>>, grads: &[Vec<T>]) -> Result<()> {
        match self {
            Optimizer::Sgd(o) => o.step(params, grads),
            Optimizer::Adam(o) => o.step(params, grads),
        }
    }
}
