//! Central finite differences, used as an oracle against the reverse sweep.
//!
//! Only forward evaluations of `f` are used here; nothing in this module
//! touches the graph or any backward rule.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `d f / d inputs[which]` by central differences with step `h`.
pub fn numeric_grad<T, F>(f: F, inputs: &[Tensor<T>], which: usize, h: f64) -> Vec<f64>
where
    T: Scalar,
    F: Fn(&[Tensor<T>]) -> f64,
{
    let base = &inputs[which];
    let mut out = Vec::with_capacity(base.numel());
    for i in 0..base.numel() {
        let probe = |delta: f64| {
            let mut data = base.to_vec();
            data[i] = T::from_f64(data[i].as_f64() + delta);
            let mut xs = inputs.to_vec();
            xs[which] = Tensor::from_vec(base.shape(), data).expect("same shape");
            f(&xs)
        };
        out.push((probe(h) - probe(-h)) / (2.0 * h));
    }
    out
}

/// `max |a - b| / max(max |b|, floor)`: a relative error that stays
/// meaningful when individual entries are near zero.
pub fn rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(floor, |m, x| m.max(x.abs()));
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs())) / scale
}
