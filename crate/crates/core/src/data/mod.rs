//! Signals, coordinate grids, subsampling and dataset construction.

mod dataset;
pub mod image;
mod synthetic;
pub mod wav;

pub(crate) use dataset::hex as hex_digest;
pub use dataset::{Dataset, Split};
pub use synthetic::{gaussians, grating, gratings, tones, GratingParams};

use composer_autodiff::{Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A sampled signal: an `H x W` image or an `S`-sample waveform, stored
/// row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    /// `[H, W]` for images, `[S]` for audio.
    pub dims: Vec<usize>,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Signal {
    pub fn new(dims: Vec<usize>, channels: usize, data: Vec<f64>) -> Result<Self> {
        let expected = dims.iter().product::<usize>() * channels;
        if data.len() != expected || channels == 0 || dims.is_empty() {
            return Err(Error::Data(format!(
                "signal of dims {dims:?} x {channels} channels needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, channels, data })
    }

    pub fn is_image(&self) -> bool {
        self.dims.len() == 2
    }

    /// Number of coordinates `M`.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `M x C` target matrix.
    pub fn targets<T: Scalar>(&self) -> Result<Tensor<T>> {
        Ok(Tensor::from_f64(&[self.len(), self.channels], &self.data)?)
    }

    /// Full-grid coordinates and targets.
    pub fn batch<T: Scalar>(&self) -> Result<CoordinateBatch<T>> {
        Ok(CoordinateBatch {
            coords: grid(&self.dims)?,
            targets: self.targets()?,
            indices: None,
        })
    }

    /// `len` consecutive audio samples starting at `start`.
    pub fn crop(&self, start: usize, len: usize) -> Result<Signal> {
        if self.dims.len() != 1 || start + len > self.dims[0] || len == 0 {
            return Err(Error::Data(format!(
                "cannot crop [{start}, {}) from signal of dims {:?}",
                start + len,
                self.dims
            )));
        }
        let c = self.channels;
        Signal::new(vec![len], c, self.data[start * c..(start + len) * c].to_vec())
    }
}

/// Coordinates paired with target features, optionally a subset of the full grid.
#[derive(Debug, Clone)]
pub struct CoordinateBatch<T: Scalar> {
    pub coords: Tensor<T>,
    pub targets: Tensor<T>,
    /// Grid rows kept by [`CoordinateBatch::subsample`].
    pub indices: Option<Vec<usize>>,
}

impl<T: Scalar> CoordinateBatch<T> {
    pub fn len(&self) -> usize {
        self.coords.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subsample(&self, fraction: f64, seed: u64) -> Result<Self> {
        let idx = subsample_indices(self.len(), fraction_count(self.len(), fraction)?, seed)?;
        Ok(Self {
            coords: gather_rows(&self.coords, &idx)?,
            targets: gather_rows(&self.targets, &idx)?,
            indices: Some(idx),
        })
    }
}

/// Pixel-centre coordinates in `[-1, 1]`, raster order; one column per axis.
pub fn grid<T: Scalar>(dims: &[usize]) -> Result<Tensor<T>> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::Data(format!("grid extents must be positive, got {dims:?}")));
    }
    let m: usize = dims.iter().product();
    let mut data = Vec::with_capacity(m * dims.len());
    for flat in 0..m {
        let mut rem = flat;
        let mut idx = vec![0; dims.len()];
        for (axis, &n) in dims.iter().enumerate().rev() {
            idx[axis] = rem % n;
            rem /= n;
        }
        for (axis, &n) in dims.iter().enumerate() {
            data.push(index_to_coord(idx[axis], n));
        }
    }
    Ok(Tensor::from_f64(&[m, dims.len()], &data)?)
}

/// `i -> (2i + 1)/n - 1`.
pub fn index_to_coord(i: usize, n: usize) -> f64 {
    (2 * i + 1) as f64 / n as f64 - 1.0
}

/// Inverse of [`index_to_coord`].
pub fn coord_to_index(c: f64, n: usize) -> usize {
    (((c + 1.0) * n as f64 - 1.0) / 2.0).round().max(0.0) as usize
}

/// `round(fraction * m)`, at least one.
pub fn fraction_count(m: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "subsample fraction must be in (0, 1], got {fraction}"
        )));
    }
    Ok(((fraction * m as f64).round() as usize).clamp(1, m.max(1)))
}

/// Sorted indices of `count` rows drawn uniformly without replacement.
pub fn subsample_indices(m: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    if count > m {
        return Err(Error::Data(format!("cannot draw {count} of {m} coordinates")));
    }
    if count == m {
        return Ok((0..m).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, m, count).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Copies the given rows of a constant matrix.
pub fn gather_rows<T: Scalar>(t: &Tensor<T>, rows: &[usize]) -> Result<Tensor<T>> {
    let (m, n) = t.dims2()?;
    let src = t.data();
    let mut out = Vec::with_capacity(rows.len() * n);
    for &r in rows {
        if r >= m {
            return Err(Error::Data(format!("row {r} out of range for {m} rows")));
        }
        out.extend_from_slice(&src[r * n..(r + 1) * n]);
    }
    Ok(Tensor::from_vec(&[rows.len(), n], out)?)
}
