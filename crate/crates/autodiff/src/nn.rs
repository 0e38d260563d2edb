//! Composite functions built from the primitives, so they inherit every
//! backward rule (including higher order where the primitives allow it).

use crate::error::{dim_err, invalid, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `(1/M) * sum_i ||pred_i - target_i||^2` over the `M` rows.
///
/// The squared norm over output channels is not divided by the channel count.
pub fn mse<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    if pred.shape() != target.shape() {
        return dim_err("mse", pred.shape(), target.shape());
    }
    let rows = pred.dims2()?.0;
    if rows == 0 {
        return invalid("mse", "no coordinates (M = 0)");
    }
    let diff = pred.sub(target)?;
    diff.mul(&diff)?.sum_all()?.scale(T::one() / T::from_f64(rows as f64))
}

/// Per-row normalisation over the last axis with learnable gain and shift.
pub fn layer_norm<T: Scalar>(x: &Tensor<T>, gain: &Tensor<T>, shift: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    let (_, n) = x.dims2()?;
    if n == 0 {
        return invalid("layer_norm", "zero-length axis");
    }
    let centered = x.sub(&x.mean_cols()?)?;
    let var = centered.mul(&centered)?.mean_cols()?;
    let inv_std = var.add_scalar(T::from_f64(eps))?.powf(T::from_f64(-0.5))?;
    centered.mul(&inv_std)?.mul(gain)?.add(shift)
}

/// `softmax(q k^T / sqrt(d)) v` for a single head.
pub fn scaled_dot_attention<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, dq) = q.dims2()?;
    let (sk, dk) = k.dims2()?;
    let (sv, _) = v.dims2()?;
    if dq != dk {
        return dim_err("attention q/k", q.shape(), k.shape());
    }
    if sk != sv {
        return dim_err("attention k/v", k.shape(), v.shape());
    }
    if sk == 0 || dq == 0 {
        return invalid("attention", "zero-length axis");
    }
    let scores = q
        .matmul_t(false, k, true)?
        .scale(T::from_f64(1.0 / (dq as f64).sqrt()))?;
    scores.softmax_rows()?.matmul(v)
}
