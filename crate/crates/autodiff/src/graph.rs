//! Append-only computation graph and the reverse sweep.
//!
//! Every backward rule is written with the same [`Tensor`] operations used in
//! the forward pass. Under [`GradMode::CreateGraph`] the saved inputs are
//! re-attached to their nodes, so the gradient computation is itself recorded
//! and a second reverse sweep over it is valid.

use std::sync::Arc;

use parking_lot::Mutex;

use crate::error::{AdError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Op<T> {
    Leaf,
    MatMul { ta: bool, tb: bool },
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(T),
    AddScalar(T),
    Powf(T),
    Exp,
    Sin,
    Cos,
    Tanh,
    Relu,
    Gelu,
    SumAll,
    SumRows,
    SumCols,
    Broadcast,
    Reshape,
    Transpose,
    SliceRows { start: usize },
    SliceCols { start: usize },
    ConcatRows,
    ConcatCols,
    SoftmaxRows,
}

#[derive(Clone)]
pub(crate) struct Saved<T> {
    pub id: Option<NodeId>,
    pub shape: Vec<usize>,
    pub data: Arc<Vec<T>>,
}

#[derive(Clone)]
struct Node<T> {
    op: Op<T>,
    inputs: Vec<Saved<T>>,
    output: Saved<T>,
}

struct GraphInner<T> {
    nodes: Vec<Node<T>>,
    bytes: usize,
}

/// How gradients returned by [`Graph::grad`] relate to the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    /// Gradients are plain values, detached from any graph.
    Detached,
    /// The reverse sweep is recorded; returned gradients carry graph nodes
    /// and can be differentiated again.
    CreateGraph,
}

/// Shared handle to a single-writer computation graph.
#[derive(Clone)]
pub struct Graph<T: Scalar> {
    inner: Arc<Mutex<GraphInner<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            inner: Arc::new(Mutex::new(GraphInner {
                nodes: Vec::new(),
                bytes: 0,
            })),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bytes of activations retained by recorded nodes.
    pub fn bytes_retained(&self) -> usize {
        self.inner.lock().bytes
    }

    pub(crate) fn same(&self, other: &Graph<T>) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    /// Registers `value` as a differentiable leaf of this graph.
    pub fn leaf(&self, value: &Tensor<T>) -> Tensor<T> {
        let data = value.data_arc();
        let shape = value.shape().to_vec();
        let id = self.push(Op::Leaf, Vec::new(), shape.clone(), data.clone());
        Tensor::attached(shape, data, self.clone(), id)
    }

    pub(crate) fn push(&self, op: Op<T>, inputs: Vec<Saved<T>>, shape: Vec<usize>, data: Arc<Vec<T>>) -> NodeId {
        let mut inner = self.inner.lock();
        let id = inner.nodes.len();
        inner.bytes += data.len() * std::mem::size_of::<T>();
        inner.nodes.push(Node {
            op,
            inputs,
            output: Saved {
                id: Some(id),
                shape,
                data,
            },
        });
        id
    }

    /// Reverse-mode gradients of the scalar `loss` with respect to `wrt`.
    ///
    /// A target that `loss` does not depend on (including a tensor from a
    /// different graph or a detached tensor) gets an all-zero gradient.
    pub fn grad(&self, loss: &Tensor<T>, wrt: &[&Tensor<T>], mode: GradMode) -> Result<Vec<Tensor<T>>> {
        if loss.numel() != 1 {
            return Err(AdError::NonScalarLoss(loss.shape().to_vec()));
        }
        let zeros = |t: &Tensor<T>| Tensor::zeros(t.shape());
        let loss_id = match loss.node_in(self) {
            Some(id) => id,
            None => return Ok(wrt.iter().map(|t| zeros(t)).collect()),
        };
        let n = loss_id + 1;

        let mut relevant = vec![false; n];
        let wrt_ids: Vec<Option<NodeId>> = wrt.iter().map(|t| t.node_in(self).filter(|&id| id < n)).collect();
        for id in wrt_ids.iter().flatten() {
            relevant[*id] = true;
        }
        {
            let inner = self.inner.lock();
            for i in 0..n {
                if !relevant[i] {
                    relevant[i] = inner.nodes[i].inputs.iter().any(|s| s.id.is_some_and(|j| relevant[j]));
                }
            }
        }
        if !relevant[loss_id] {
            return Ok(wrt.iter().map(|t| zeros(t)).collect());
        }

        let create = mode == GradMode::CreateGraph;
        let revive = |s: &Saved<T>| -> Tensor<T> {
            match (create, s.id) {
                (true, Some(id)) => Tensor::attached(s.shape.clone(), s.data.clone(), self.clone(), id),
                _ => Tensor::from_arc(s.shape.clone(), s.data.clone()),
            }
        };

        let mut grads: Vec<Option<Tensor<T>>> = vec![None; n];
        grads[loss_id] = Some(Tensor::full(loss.shape(), T::one()));

        for i in (0..n).rev() {
            if !relevant[i] {
                continue;
            }
            let Some(g) = grads[i].clone() else { continue };
            let node = self.inner.lock().nodes[i].clone();
            if node.op == Op::Leaf {
                continue;
            }
            let need: Vec<bool> = node.inputs.iter().map(|s| s.id.is_some_and(|j| relevant[j])).collect();
            if !need.iter().any(|&x| x) {
                continue;
            }
            let inputs: Vec<Tensor<T>> = node.inputs.iter().map(revive).collect();
            let output = revive(&node.output);
            let input_grads = crate::backward::rule(node.op, &inputs, &output, &g, &need)?;
            for ((saved, gi), needed) in node.inputs.iter().zip(input_grads).zip(need) {
                if !needed {
                    continue;
                }
                let (Some(j), Some(gi)) = (saved.id, gi) else { continue };
                grads[j] = Some(match grads[j].take() {
                    Some(acc) => acc.add(&gi)?,
                    None => gi,
                });
            }
        }

        Ok(wrt
            .iter()
            .zip(wrt_ids)
            .map(|(t, id)| match id.and_then(|id| grads[id].clone()) {
                Some(g) => g,
                None => zeros(t),
            })
            .collect())
    }
}
