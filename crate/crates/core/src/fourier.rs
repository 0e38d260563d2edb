//! Random Fourier feature encoding of coordinates.

use std::f64::consts::PI;

use composer_autodiff::{Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::FourierConfig;
use crate::error::{Error, Result};

/// Coordinates may exceed `[-1, 1]` by this much before being rejected.
pub const COORD_SLACK: f64 = 1e-6;

/// `γ(v) = [cos(2πBv), sin(2πBv)]` with a frozen `(d_f/2) x d_in` matrix `B`.
#[derive(Debug, Clone)]
pub struct FourierFeatures<T: Scalar> {
    pub config: FourierConfig,
    freqs: Tensor<T>,
}

impl<T: Scalar> FourierFeatures<T> {
    /// Draws `B` elementwise from `N(0, sigma²)` using the configured seed.
    pub fn new(config: FourierConfig) -> Result<Self> {
        if config.d_f == 0 || !config.d_f.is_multiple_of(2) {
            return Err(Error::Config(format!("d_f must be even, got {}", config.d_f)));
        }
        let normal = Normal::new(0.0, config.sigma)
            .map_err(|e| Error::Config(format!("Fourier scale {}: {e}", config.sigma)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let n = config.d_f / 2 * config.d_in;
        let data: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let freqs = Tensor::from_f64(&[config.d_f / 2, config.d_in], &data)?;
        Ok(Self { config, freqs })
    }

    /// Uses an explicit frequency matrix of shape `(d_f/2) x d_in`.
    pub fn with_matrix(config: FourierConfig, freqs: Tensor<T>) -> Result<Self> {
        if freqs.shape() != [config.d_f / 2, config.d_in] {
            return Err(Error::Config(format!(
                "frequency matrix shape {:?} does not match d_f {} / d_in {}",
                freqs.shape(),
                config.d_f,
                config.d_in
            )));
        }
        Ok(Self {
            config,
            freqs: freqs.detach(),
        })
    }

    pub fn matrix(&self) -> &Tensor<T> {
        &self.freqs
    }

    /// Encodes an `M x d_in` coordinate batch into `M x d_f` features.
    pub fn encode(&self, coords: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, d_in) = coords.dims2()?;
        if d_in != self.config.d_in {
            return Err(Error::Data(format!(
                "coordinates have {d_in} columns, encoder expects {}",
                self.config.d_in
            )));
        }
        let limit = 1.0 + COORD_SLACK;
        if let Some((i, x)) = coords
            .data()
            .iter()
            .enumerate()
            .find(|(_, x)| x.as_f64().abs() > limit || x.is_nan())
        {
            return Err(Error::Data(format!(
                "coordinate {x} at row {} lies outside [-1, 1]",
                i / d_in
            )));
        }
        let proj = coords
            .detach()
            .matmul_t(false, &self.freqs, true)?
            .scale(T::from_f64(2.0 * PI))?;
        Ok(Tensor::concat_cols(&[&proj.cos()?, &proj.sin()?])?)
    }
}
