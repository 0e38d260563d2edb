//! Forward kernels for every primitive.

use crate::error::{dim_err, invalid, Result};
use crate::graph::Op;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

pub(crate) fn gelu_scalar<T: Scalar>(x: T) -> T {
    let x = x.as_f64();
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    T::from_f64(0.5 * x * (1.0 + t))
}

pub(crate) fn gelu_derivative<T: Scalar>(x: T) -> T {
    let x = x.as_f64();
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_K * x * x);
    T::from_f64(0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
}

/// How a smaller shape expands to a rank-2 target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Expand {
    Same,
    Scalar,
    Row,
    Col,
}

pub(crate) fn expand_kind(src: &[usize], dst: &[usize]) -> Option<Expand> {
    if src == dst {
        return Some(Expand::Same);
    }
    if src.iter().product::<usize>() == 1 {
        return Some(Expand::Scalar);
    }
    match (src, dst) {
        ([n], [_, c]) | ([1, n], [_, c]) if n == c => Some(Expand::Row),
        ([r, 1], [m, _]) if r == m => Some(Expand::Col),
        _ => None,
    }
}

impl<T: Scalar> Tensor<T> {
    fn map(&self, op: Op<T>, f: impl Fn(T) -> T) -> Result<Self> {
        let data = self.data().iter().map(|&x| f(x)).collect();
        Self::record(op, &[self], self.shape().to_vec(), data)
    }

    fn zip_same(&self, other: &Self, op: Op<T>, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape() != other.shape() {
            return dim_err(name, self.shape(), other.shape());
        }
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect();
        Self::record(op, &[self, other], self.shape().to_vec(), data)
    }

    /// Brings both operands to a common shape (equal, scalar, row or column
    /// broadcast only).
    fn align(&self, other: &Self, name: &'static str) -> Result<(Self, Self)> {
        if self.shape() == other.shape() {
            return Ok((self.clone(), other.clone()));
        }
        if expand_kind(other.shape(), self.shape()).is_some() {
            return Ok((self.clone(), other.broadcast_to(self.shape())?));
        }
        if expand_kind(self.shape(), other.shape()).is_some() {
            return Ok((self.broadcast_to(other.shape())?, other.clone()));
        }
        dim_err(name, self.shape(), other.shape())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let (a, b) = self.align(other, "add")?;
        a.zip_same(&b, Op::Add, "add", |x, y| x + y)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        let (a, b) = self.align(other, "sub")?;
        a.zip_same(&b, Op::Sub, "sub", |x, y| x - y)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        let (a, b) = self.align(other, "mul")?;
        a.zip_same(&b, Op::Mul, "mul", |x, y| x * y)
    }

    pub fn div(&self, other: &Self) -> Result<Self> {
        let (a, b) = self.align(other, "div")?;
        a.zip_same(&b, Op::Div, "div", |x, y| x / y)
    }

    pub fn neg(&self) -> Result<Self> {
        self.map(Op::Neg, |x| -x)
    }

    pub fn scale(&self, c: T) -> Result<Self> {
        self.map(Op::Scale(c), |x| x * c)
    }

    pub fn add_scalar(&self, c: T) -> Result<Self> {
        self.map(Op::AddScalar(c), |x| x + c)
    }

    pub fn powf(&self, p: T) -> Result<Self> {
        self.map(Op::Powf(p), |x| x.powf(p))
    }

    pub fn exp(&self) -> Result<Self> {
        self.map(Op::Exp, |x| x.exp())
    }

    pub fn sin(&self) -> Result<Self> {
        self.map(Op::Sin, |x| x.sin())
    }

    pub fn cos(&self) -> Result<Self> {
        self.map(Op::Cos, |x| x.cos())
    }

    pub fn tanh(&self) -> Result<Self> {
        self.map(Op::Tanh, |x| x.tanh())
    }

    /// Rectifier; its derivative at exactly zero is taken as zero and its
    /// second derivative as identically zero.
    pub fn relu(&self) -> Result<Self> {
        self.map(Op::Relu, |x| if x > T::zero() { x } else { T::zero() })
    }

    /// Tanh-approximated GELU. Differentiable to first order only: the
    /// backward pass multiplies by a constant derivative mask.
    pub fn gelu(&self) -> Result<Self> {
        self.map(Op::Gelu, gelu_scalar)
    }

    pub fn sum_all(&self) -> Result<Self> {
        let s = self.data().iter().copied().sum();
        Self::record(Op::SumAll, &[self], Vec::new(), vec![s])
    }

    pub fn mean_all(&self) -> Result<Self> {
        if self.numel() == 0 {
            return invalid("mean_all", "empty tensor");
        }
        self.sum_all()?.scale(T::one() / T::from_f64(self.numel() as f64))
    }

    /// Column sums: `[m, n] -> [1, n]`.
    pub fn sum_rows(&self) -> Result<Self> {
        let (m, n) = self.dims2()?;
        let mut out = vec![T::zero(); n];
        for row in self.data().chunks_exact(n.max(1)).take(m) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o = *o + x;
            }
        }
        Self::record(Op::SumRows, &[self], vec![1, n], out)
    }

    /// Row sums: `[m, n] -> [m, 1]`.
    pub fn sum_cols(&self) -> Result<Self> {
        let (m, n) = self.dims2()?;
        if n == 0 {
            return invalid("sum_cols", "zero-length axis");
        }
        let out = self.data().chunks_exact(n).map(|r| r.iter().copied().sum()).collect();
        Self::record(Op::SumCols, &[self], vec![m, 1], out)
    }

    /// Row means: `[m, n] -> [m, 1]`.
    pub fn mean_cols(&self) -> Result<Self> {
        let (_, n) = self.dims2()?;
        self.sum_cols()?.scale(T::one() / T::from_f64(n as f64))
    }

    /// Scalar, row (`[n]`/`[1, n]`) or column (`[m, 1]`) expansion to `shape`.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Self> {
        let kind = match expand_kind(self.shape(), shape) {
            Some(k) => k,
            None => return dim_err("broadcast", self.shape(), shape),
        };
        let numel: usize = shape.iter().product();
        let data = match kind {
            Expand::Same => return Ok(self.clone()),
            Expand::Scalar => vec![self.data()[0]; numel],
            Expand::Row => {
                let n = shape[1];
                let mut v = Vec::with_capacity(numel);
                for _ in 0..shape[0] {
                    v.extend_from_slice(&self.data()[..n]);
                }
                v
            }
            Expand::Col => {
                let n = shape[1];
                let mut v = Vec::with_capacity(numel);
                for &x in self.data() {
                    v.extend(std::iter::repeat_n(x, n));
                }
                v
            }
        };
        Self::record(Op::Broadcast, &[self], shape.to_vec(), data)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.numel() {
            return dim_err("reshape", self.shape(), shape);
        }
        Self::record(Op::Reshape, &[self], shape.to_vec(), self.to_vec())
    }

    pub fn transpose(&self) -> Result<Self> {
        let (m, n) = self.dims2()?;
        let src = self.data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        Self::record(Op::Transpose, &[self], vec![n, m], out)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.matmul_t(false, other, false)
    }

    /// `op(self) * op(other)` where `op` optionally transposes.
    pub fn matmul_t(&self, ta: bool, other: &Self, tb: bool) -> Result<Self> {
        if self.shape().len() != 2 || other.shape().len() != 2 {
            return dim_err("matmul", self.shape(), other.shape());
        }
        let (ar, ac) = (self.shape()[0], self.shape()[1]);
        let (br, bc) = (other.shape()[0], other.shape()[1]);
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return dim_err("matmul", self.shape(), other.shape());
        }
        let (rsa, csa) = if ta { (1, ac as isize) } else { (ac as isize, 1) };
        let (rsb, csb) = if tb { (1, bc as isize) } else { (bc as isize, 1) };
        let mut out = vec![T::zero(); m * n];
        if m > 0 && n > 0 && k > 0 {
            // SAFETY: strides describe the row-major buffers above; `out` is
            // freshly allocated and does not alias the inputs.
            unsafe {
                T::gemm(
                    m,
                    k,
                    n,
                    T::one(),
                    self.data().as_ptr(),
                    rsa,
                    csa,
                    other.data().as_ptr(),
                    rsb,
                    csb,
                    T::zero(),
                    out.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        }
        Self::record(Op::MatMul { ta, tb }, &[self, other], vec![m, n], out)
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Self> {
        let (m, n) = self.dims2()?;
        if start + len > m {
            return invalid("slice_rows", format!("rows {start}..{} out of {m}", start + len));
        }
        let data = self.data()[start * n..(start + len) * n].to_vec();
        Self::record(Op::SliceRows { start }, &[self], vec![len, n], data)
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Self> {
        let (m, n) = self.dims2()?;
        if start + len > n {
            return invalid("slice_cols", format!("cols {start}..{} out of {n}", start + len));
        }
        let mut data = Vec::with_capacity(m * len);
        for row in self.data().chunks_exact(n.max(1)).take(m) {
            data.extend_from_slice(&row[start..start + len]);
        }
        Self::record(Op::SliceCols { start }, &[self], vec![m, len], data)
    }

    pub fn concat_rows(parts: &[&Self]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return invalid("concat_rows", "no inputs");
        };
        let (_, n) = first.dims2()?;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let (r, c) = p.dims2()?;
            if c != n {
                return dim_err("concat_rows", first.shape(), p.shape());
            }
            rows += r;
            data.extend_from_slice(p.data());
        }
        Self::record(Op::ConcatRows, parts, vec![rows, n], data)
    }

    pub fn concat_cols(parts: &[&Self]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return invalid("concat_cols", "no inputs");
        };
        let (m, _) = first.dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = p.dims2()?;
            if r != m {
                return dim_err("concat_cols", first.shape(), p.shape());
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data()[i * w..(i + 1) * w]);
            }
        }
        Self::record(Op::ConcatCols, parts, vec![m, total], data)
    }

    /// Numerically stabilised softmax over the last axis.
    pub fn softmax_rows(&self) -> Result<Self> {
        let (_, n) = self.dims2()?;
        if n == 0 {
            return invalid("softmax_rows", "zero-length axis");
        }
        let mut out = Vec::with_capacity(self.numel());
        for row in self.data().chunks_exact(n) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let start = out.len();
            let mut sum = T::zero();
            for &x in row {
                let e = (x - max).exp();
                sum = sum + e;
                out.push(e);
            }
            for v in &mut out[start..] {
                *v = *v / sum;
            }
        }
        Self::record(Op::SoftmaxRows, &[self], self.shape().to_vec(), out)
    }
}
