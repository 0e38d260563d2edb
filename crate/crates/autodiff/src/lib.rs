//! Reverse-mode automatic differentiation over dense row-major tensors.
//!
//! Tensors are values; attaching one to a [`Graph`] with [`Graph::leaf`]
//! makes every operation on it recorded. [`Graph::grad`] runs the reverse
//! sweep and, under [`GradMode::CreateGraph`], records that sweep too so the
//! resulting gradients can be differentiated again.
//!
//! ```
//! use composer_autodiff::{Graph, GradMode, Tensor};
//!
//! let g = Graph::<f64>::new();
//! let x = g.leaf(&Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap());
//! let loss = x.mul(&x).unwrap().sum_all().unwrap();
//! let dx = g.grad(&loss, &[&x], GradMode::Detached).unwrap();
//! assert_eq!(dx[0].data(), &[2.0, 4.0, 6.0]);
//! ```

mod backward;
mod error;
pub mod gradcheck;
mod graph;
pub mod nn;
mod ops;
mod scalar;
mod tensor;

pub use error::{AdError, Result};
pub use graph::{GradMode, Graph, NodeId};
pub use scalar::Scalar;
pub use tensor::Tensor;
