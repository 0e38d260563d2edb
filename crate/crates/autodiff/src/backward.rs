//! Vector-Jacobian products, expressed with recorded tensor operations.

use crate::error::{invalid, Result};
use crate::graph::Op;
use crate::ops::{expand_kind, gelu_derivative, Expand};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Gradients of the inputs of one node, given the gradient `g` of its output.
/// Entries for inputs with `need[i] == false` may be `None`.
pub(crate) fn rule<T: Scalar>(
    op: Op<T>,
    x: &[Tensor<T>],
    out: &Tensor<T>,
    g: &Tensor<T>,
    need: &[bool],
) -> Result<Vec<Option<Tensor<T>>>> {
    let want = |i: usize| need.get(i).copied().unwrap_or(false);
    let one = |t: Result<Tensor<T>>| t.map(|t| vec![Some(t)]);
    match op {
        Op::Leaf => Ok(Vec::new()),
        Op::MatMul { ta, tb } => {
            let (a, b) = (&x[0], &x[1]);
            let ga = if !want(0) {
                None
            } else if ta {
                Some(b.matmul_t(tb, g, true)?)
            } else {
                Some(g.matmul_t(false, b, !tb)?)
            };
            let gb = if !want(1) {
                None
            } else if tb {
                Some(g.matmul_t(true, a, ta)?)
            } else {
                Some(a.matmul_t(!ta, g, false)?)
            };
            Ok(vec![ga, gb])
        }
        Op::Add => Ok(vec![Some(g.clone()), Some(g.clone())]),
        Op::Sub => Ok(vec![Some(g.clone()), if want(1) { Some(g.neg()?) } else { None }]),
        Op::Mul => Ok(vec![
            if want(0) { Some(g.mul(&x[1])?) } else { None },
            if want(1) { Some(g.mul(&x[0])?) } else { None },
        ]),
        Op::Div => Ok(vec![
            if want(0) { Some(g.div(&x[1])?) } else { None },
            if want(1) {
                Some(g.mul(out)?.div(&x[1])?.neg()?)
            } else {
                None
            },
        ]),
        Op::Neg => one(g.neg()),
        Op::Scale(c) => one(g.scale(c)),
        Op::AddScalar(_) => Ok(vec![Some(g.clone())]),
        Op::Powf(p) => one(x[0].powf(p - T::one())?.scale(p)?.mul(g)),
        Op::Exp => one(g.mul(out)),
        Op::Sin => one(g.mul(&x[0].cos()?)),
        Op::Cos => one(g.mul(&x[0].sin()?)?.neg()),
        Op::Tanh => one(g.sub(&g.mul(out)?.mul(out)?)),
        Op::Relu => {
            let mask: Vec<T> = x[0]
                .data()
                .iter()
                .map(|&v| if v > T::zero() { T::one() } else { T::zero() })
                .collect();
            one(g.mul(&Tensor::from_vec(x[0].shape(), mask)?))
        }
        Op::Gelu => {
            let d: Vec<T> = x[0].data().iter().map(|&v| gelu_derivative(v)).collect();
            one(g.mul(&Tensor::from_vec(x[0].shape(), d)?))
        }
        Op::SumAll | Op::SumRows | Op::SumCols => one(g.broadcast_to(x[0].shape())),
        Op::Broadcast => {
            let src = x[0].shape();
            let reduced = match expand_kind(src, out.shape()) {
                Some(Expand::Same) => g.clone(),
                Some(Expand::Scalar) => g.sum_all()?.reshape(src)?,
                Some(Expand::Row) => g.sum_rows()?.reshape(src)?,
                Some(Expand::Col) => g.sum_cols()?,
                None => return invalid("broadcast backward", "shape no longer expandable"),
            };
            Ok(vec![Some(reduced)])
        }
        Op::Reshape => one(g.reshape(x[0].shape())),
        Op::Transpose => one(g.transpose()),
        Op::SliceRows { start } => {
            let (m, n) = x[0].dims2()?;
            let len = g.dims2()?.0;
            let head = Tensor::zeros(&[start, n]);
            let tail = Tensor::zeros(&[m - start - len, n]);
            let parts: Vec<&Tensor<T>> = [&head, g, &tail].into_iter().filter(|t| t.numel() > 0).collect();
            one(Tensor::concat_rows(&parts))
        }
        Op::SliceCols { start } => {
            let (m, n) = x[0].dims2()?;
            let len = g.dims2()?.1;
            let head = Tensor::zeros(&[m, start]);
            let tail = Tensor::zeros(&[m, n - start - len]);
            let parts: Vec<&Tensor<T>> = [&head, g, &tail].into_iter().filter(|t| t.numel() > 0).collect();
            one(Tensor::concat_cols(&parts))
        }
        Op::ConcatRows => {
            let mut offset = 0;
            let mut grads = Vec::with_capacity(x.len());
            for (i, part) in x.iter().enumerate() {
                let rows = part.dims2()?.0;
                grads.push(if want(i) {
                    Some(g.slice_rows(offset, rows)?)
                } else {
                    None
                });
                offset += rows;
            }
            Ok(grads)
        }
        Op::ConcatCols => {
            let mut offset = 0;
            let mut grads = Vec::with_capacity(x.len());
            for (i, part) in x.iter().enumerate() {
                let cols = part.dims2()?.1;
                grads.push(if want(i) {
                    Some(g.slice_cols(offset, cols)?)
                } else {
                    None
                });
                offset += cols;
            }
            Ok(grads)
        }
        Op::SoftmaxRows => {
            let dot = g.mul(out)?.sum_cols()?;
            one(out.mul(&g.sub(&dot)?))
        }
    }
}
