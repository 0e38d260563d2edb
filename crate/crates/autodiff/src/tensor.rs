use std::fmt;
use std::sync::Arc;

use crate::error::{dim_err, AdError, Result};
use crate::graph::{Graph, NodeId, Op, Saved};
use crate::scalar::Scalar;

#[derive(Clone)]
pub(crate) struct NodeRef<T: Scalar> {
    pub graph: Graph<T>,
    pub id: NodeId,
}

/// Dense row-major tensor, optionally attached to a [`Graph`] node.
///
/// Cloning is cheap: the buffer is shared.
#[derive(Clone)]
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    node: Option<NodeRef<T>>,
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("node", &self.node.as_ref().map(|n| n.id))
            .field("data", &self.data)
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return dim_err("from_vec", shape, &[data.len()]);
        }
        Ok(Self::from_arc(shape.to_vec(), Arc::new(data)))
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&x| T::from_f64(x)).collect())
    }

    pub(crate) fn from_arc(shape: Vec<usize>, data: Arc<Vec<T>>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data,
            node: None,
        }
    }

    pub(crate) fn attached(shape: Vec<usize>, data: Arc<Vec<T>>, graph: Graph<T>, id: NodeId) -> Self {
        Self {
            shape,
            data,
            node: Some(NodeRef { graph, id }),
        }
    }

    pub fn scalar(x: T) -> Self {
        Self::from_arc(Vec::new(), Arc::new(vec![x]))
    }

    pub fn full(shape: &[usize], x: T) -> Self {
        let n = shape.iter().product();
        Self::from_arc(shape.to_vec(), Arc::new(vec![x; n]))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn eye(n: usize) -> Self {
        let mut data = vec![T::zero(); n * n];
        for i in 0..n {
            data[i * n + i] = T::one();
        }
        Self::from_arc(vec![n, n], Arc::new(data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<T>> {
        self.data.clone()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data.as_ref().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(AdError::NonScalarLoss(self.shape.clone()));
        }
        Ok(self.data[0])
    }

    /// Same values, no graph node.
    pub fn detach(&self) -> Self {
        Self::from_arc(self.shape.clone(), self.data.clone())
    }

    pub fn is_attached(&self) -> bool {
        self.node.is_some()
    }

    pub fn graph(&self) -> Option<&Graph<T>> {
        self.node.as_ref().map(|n| &n.graph)
    }

    pub(crate) fn node_in(&self, graph: &Graph<T>) -> Option<NodeId> {
        self.node.as_ref().filter(|n| n.graph.same(graph)).map(|n| n.id)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Rows and columns of a rank-2 tensor; rank-1 tensors read as one row.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            [n] => Ok((1, *n)),
            _ => Err(AdError::Invalid {
                op: "dims2",
                reason: format!("expected a matrix, got shape {:?}", self.shape),
            }),
        }
    }

    pub(crate) fn saved(&self) -> Saved<T> {
        Saved {
            id: self.node.as_ref().map(|n| n.id),
            shape: self.shape.clone(),
            data: self.data.clone(),
        }
    }

    /// Builds the result of `op`, recording a node when any input is attached.
    pub(crate) fn record(op: Op<T>, inputs: &[&Tensor<T>], shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let mut graph: Option<&Graph<T>> = None;
        for t in inputs {
            if let Some(n) = &t.node {
                match graph {
                    None => graph = Some(&n.graph),
                    Some(g) if g.same(&n.graph) => {}
                    Some(_) => return Err(AdError::GraphMismatch),
                }
            }
        }
        let data = Arc::new(data);
        Ok(match graph {
            None => Self::from_arc(shape, data),
            Some(g) => {
                let saved = inputs.iter().map(|t| t.saved()).collect();
                let id = g.push(op, saved, shape.clone(), data.clone());
                Self::attached(shape, data, g.clone(), id)
            }
        })
    }
}
