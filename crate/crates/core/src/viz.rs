//! Activation maps and side-by-side reconstructions.

use std::path::{Path, PathBuf};

use composer_autodiff::{Scalar, Tensor};
use serde::Serialize;

use crate::bundle::Model;
use crate::data::image::{save_png, Image8};
use crate::data::{Dataset, Signal};
use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::model::{forward_features, ComposerMatrix, SharedParams};

/// Fraction of coordinates counted as a neuron's support.
pub const SUPPORT_FRACTION: f64 = 0.1;

/// Column `j` of a row-major `rows x cols` matrix.
fn column(data: &[f64], cols: usize, j: usize) -> Vec<f64> {
    data.iter().skip(j).step_by(cols).copied().collect()
}

fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// Indices of the `k` columns with the largest variance, ties broken by
/// lower index.
pub fn top_variance_neurons(acts: &Tensor<impl Scalar>, k: usize) -> Result<Vec<usize>> {
    let (m, d) = acts.dims2()?;
    if k > d {
        return Err(Error::Config(format!(
            "asked for {k} neurons per layer but layers have {d}"
        )));
    }
    if m == 0 {
        return Err(Error::Data("activation map over an empty grid".into()));
    }
    let data = acts.to_f64_vec();
    let vars: Vec<f64> = (0..d).map(|j| variance(&column(&data, d, j))).collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| vars[b].total_cmp(&vars[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

/// Min-max scaling to bytes; a constant map becomes uniform mid-gray.
pub fn normalize_map(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) || !range.is_finite() {
        return vec![128; values.len()];
    }
    values
        .iter()
        .map(|v| ((v - lo) / range * 255.0).round() as u8)
        .collect()
}

/// Hidden activations of every layer `1..L-1` over the full grid.
pub fn hidden_activations<T: Scalar>(
    shared: &SharedParams<T>,
    composer: &ComposerMatrix<T>,
    gamma: &Tensor<T>,
) -> Result<Vec<Tensor<T>>> {
    Ok(forward_features(shared, composer, gamma, true)?.hidden)
}

/// One selected neuron of one layer.
#[derive(Debug, Clone, Serialize)]
pub struct NeuronMap {
    /// 1-based hidden layer.
    pub layer: usize,
    pub neuron: usize,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct ActivationFiles {
    pub montage: PathBuf,
    pub neurons: Vec<NeuronMap>,
}

/// Writes `layer{l}-neuron{j}.png` for the `k` highest-variance neurons of
/// every hidden layer plus `montage.png` with one row per layer.
pub fn viz_activations<T: Scalar>(
    model: &Model<T>,
    signal: &Signal,
    k: usize,
    out_dir: &Path,
) -> Result<ActivationFiles> {
    if !signal.is_image() {
        return Err(Error::Data("activation maps need an image-modality checkpoint".into()));
    }
    let (h, w) = (signal.dims[0], signal.dims[1]);
    let gamma = model.grid_features()?;
    let (shared, composer) = model.instance_params(signal, &gamma)?;
    let layers = hidden_activations(&shared, &composer, &gamma)?;
    std::fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;

    let rows = layers.len();
    let mut montage = vec![0u8; rows * h * k * w];
    let mut neurons = Vec::with_capacity(rows * k);
    for (li, acts) in layers.iter().enumerate() {
        let d = acts.shape()[1];
        let data = acts.to_f64_vec();
        for (ci, &j) in top_variance_neurons(acts, k)?.iter().enumerate() {
            let pixels = normalize_map(&column(&data, d, j));
            for r in 0..h {
                let dst = ((li * h + r) * k + ci) * w;
                montage[dst..dst + w].copy_from_slice(&pixels[r * w..(r + 1) * w]);
            }
            let path = out_dir.join(format!("layer{}-neuron{j}.png", li + 1));
            save_png(&path, &Image8::new(w, h, 1, pixels)?)?;
            neurons.push(NeuronMap {
                layer: li + 1,
                neuron: j,
                path,
            });
        }
    }
    let path = out_dir.join("montage.png");
    save_png(&path, &Image8::new(k * w, rows * h, 1, montage)?)?;
    Ok(ActivationFiles { montage: path, neurons })
}

/// The top `fraction` of coordinates by value (at least one),
/// ties broken by lower index.
pub fn support_set(values: &[f64], fraction: f64) -> Vec<usize> {
    let count = ((values.len() as f64 * fraction).round() as usize).clamp(1, values.len().max(1));
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(count);
    order.sort_unstable();
    order
}

/// Intersection over union of two sorted index sets.
pub fn iou(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Mean over neurons of the IoU between neuron `j`'s support in `a` and in
/// `b` (both `M x d`). Neurons constant on either grid are left out; `None`
/// when no neuron qualifies.
pub fn mean_support_iou(a: &Tensor<impl Scalar>, b: &Tensor<impl Scalar>) -> Result<Option<f64>> {
    let (m, d) = a.dims2()?;
    if b.dims2()? != (m, d) {
        return Err(Error::Data(format!(
            "activation maps {:?} and {:?} differ in shape",
            a.shape(),
            b.shape()
        )));
    }
    let (da, db) = (a.to_f64_vec(), b.to_f64_vec());
    let scores: Vec<f64> = (0..d)
        .filter_map(|j| {
            let (ca, cb) = (column(&da, d, j), column(&db, d, j));
            (variance(&ca) > 0.0 && variance(&cb) > 0.0)
                .then(|| iou(&support_set(&ca, SUPPORT_FRACTION), &support_set(&cb, SUPPORT_FRACTION)))
        })
        .collect();
    Ok((!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64))
}

#[derive(Debug, Clone, Serialize)]
pub struct ReconstructionFile {
    pub index: usize,
    pub psnr: f64,
    pub path: PathBuf,
}

fn file_stem(name: &str) -> String {
    let base = Path::new(name).file_stem().and_then(|s| s.to_str()).unwrap_or(name);
    base.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

/// Writes `<name>-psnr<xx.xx>.png` with the target on the left and the
/// reconstruction on the right, for each dataset index in `indices`.
pub fn viz_reconstruction<T: Scalar>(
    model: &Model<T>,
    dataset: &Dataset,
    indices: &[usize],
    out_dir: &Path,
) -> Result<Vec<ReconstructionFile>> {
    let gamma = model.grid_features()?;
    std::fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    let mut files = Vec::with_capacity(indices.len());
    for &idx in indices {
        if idx >= dataset.instances.len() {
            return Err(Error::Data(format!(
                "instance {idx} out of range ({} instances)",
                dataset.instances.len()
            )));
        }
        let view = dataset.eval_view(idx)?;
        if !view.is_image() {
            return Err(Error::Data("side-by-side reconstructions need images".into()));
        }
        let pred = model.reconstruct(&view, &gamma)?;
        let score = psnr(&pred, &view.data)?;
        let recon = Signal::new(view.dims.clone(), view.channels, pred)?;
        let (left, right) = (Image8::from_signal(&view)?, Image8::from_signal(&recon)?);
        let (w, h, c) = (left.width, left.height, left.channels);
        let mut pixels = Vec::with_capacity(2 * w * h * c);
        for r in 0..h {
            pixels.extend_from_slice(&left.pixels[r * w * c..(r + 1) * w * c]);
            pixels.extend_from_slice(&right.pixels[r * w * c..(r + 1) * w * c]);
        }
        let path = out_dir.join(format!("{}-psnr{score:.2}.png", file_stem(&dataset.names[idx])));
        save_png(&path, &Image8::new(2 * w, h, c, pixels)?)?;
        files.push(ReconstructionFile {
            index: idx,
            psnr: score,
            path,
        });
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_prefers_variance_then_index() {
        let acts = Tensor::<f64>::from_vec(
            &[3, 4],
            vec![0.0, 1.0, 5.0, 1.0, 0.0, 2.0, 5.0, 2.0, 0.0, 3.0, 5.0, 3.0],
        )
        .unwrap();
        assert_eq!(top_variance_neurons(&acts, 2).unwrap(), vec![1, 3]);
        assert_eq!(top_variance_neurons(&acts, 4).unwrap(), vec![1, 3, 0, 2]);
        assert!(matches!(top_variance_neurons(&acts, 5), Err(Error::Config(_))));
    }

    #[test]
    fn constant_map_is_gray() {
        assert_eq!(normalize_map(&[0.3; 5]), vec![128; 5]);
        assert_eq!(normalize_map(&[1.0, 2.0, 3.0]), vec![0, 128, 255]);
    }

    #[test]
    fn support_and_iou() {
        let v: Vec<f64> = (0..20).map(f64::from).collect();
        assert_eq!(support_set(&v, 0.1), vec![18, 19]);
        assert_eq!(support_set(&[1.0; 10], 0.1), vec![0]);
        assert_eq!(iou(&[1, 2, 3], &[2, 3, 4]), 0.5);
        assert_eq!(iou(&[], &[]), 1.0);
    }

    #[test]
    fn file_stems_are_sanitised() {
        assert_eq!(file_stem("grating-0007"), "grating-0007");
        assert_eq!(file_stem("dir/cat photo.png"), "cat_photo");
    }
}
