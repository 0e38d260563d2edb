//! The coordinate MLP with one modulated weight matrix.
//!
//! Layer 1 maps Fourier features to low-level frequency patterns, the
//! modulated layer (layer 2 by default) turns them into instance content
//! patterns through `W = U V⁽ⁿ⁾`, and the remaining layers form the shared
//! pattern composition rule. Only the composer `V⁽ⁿ⁾` (plus `U⁽ⁿ⁾` for the
//! `both_factors` variant) differs between instances.

use composer_autodiff::{Scalar, Tensor};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{MlpConfig, Variant};
use crate::error::{Error, Result};
use crate::fourier::FourierFeatures;
use crate::params::Params;

/// Variance floor used by [`weight_standardize`].
pub const WS_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Layer<T: Scalar> {
    /// Dense `out x in` weight; for the modulated layer this is the shared
    /// factor `U` (absent for `direct_v` and `both_factors`).
    pub weight: Option<Tensor<T>>,
    pub bias: Tensor<T>,
}

/// Every instance-agnostic parameter of the MLP.
#[derive(Debug, Clone)]
pub struct SharedParams<T: Scalar> {
    pub config: MlpConfig,
    pub fourier: FourierFeatures<T>,
    pub layers: Vec<Layer<T>>,
}

/// Instance-specific composer: `V` is `r x in`, `U` (only for
/// `both_factors`) is `out x r`.
#[derive(Debug, Clone)]
pub struct ComposerMatrix<T: Scalar> {
    pub v: Tensor<T>,
    pub u: Option<Tensor<T>>,
    pub instance: Option<usize>,
}

fn normal_tensor<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Result<Tensor<T>> {
    let n = shape.iter().product();
    let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
    let data: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
    Ok(Tensor::from_f64(shape, &data)?)
}

fn uniform_tensor<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Result<Tensor<T>> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Ok(Tensor::from_f64(shape, &data)?)
}

impl<T: Scalar> SharedParams<T> {
    /// Dense weights and biases are drawn uniformly in `±1/sqrt(fan_in)`;
    /// the shared factor `U` from `N(0, 1/sqrt(r d))`.
    pub fn init(config: &MlpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let fourier = FourierFeatures::new(config.fourier.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u_std = 1.0 / ((config.rank * config.hidden) as f64).sqrt();
        let mut layers = Vec::with_capacity(config.layers);
        for l in 1..=config.layers {
            let (input, output) = config.layer_dims(l);
            let bound = 1.0 / (input as f64).sqrt();
            let weight = if l == config.modulated_layer {
                match config.variant {
                    Variant::FactorizedUv => Some(normal_tensor(&mut rng, &[output, config.rank], u_std)?),
                    Variant::Hadamard => Some(normal_tensor(&mut rng, &[config.rank, input], u_std)?),
                    Variant::DirectV | Variant::BothFactors => None,
                }
            } else {
                Some(uniform_tensor(&mut rng, &[output, input], bound)?)
            };
            let bias = uniform_tensor(&mut rng, &[output], bound)?;
            layers.push(Layer { weight, bias });
        }
        Ok(Self {
            config: config.clone(),
            fourier,
            layers,
        })
    }

    /// Shared factor `U` of the modulated layer, when the variant has one.
    pub fn composer_u(&self) -> Option<&Tensor<T>> {
        self.layers[self.config.modulated_layer - 1].weight.as_ref()
    }

    /// Same structure with every tensor zeroed.
    pub fn zeroed(&self) -> Self {
        let mut out = self.clone();
        for (_, t) in out.params_mut() {
            *t = Tensor::zeros(t.shape());
        }
        out
    }
}

impl<T: Scalar> Params<T> for SharedParams<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let m = self.config.modulated_layer;
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let l = i + 1;
            if let Some(w) = &layer.weight {
                let name = if l == m { "u" } else { "weight" };
                out.push((format!("mlp.layer{l}.{name}"), w));
            }
            out.push((format!("mlp.layer{l}.bias"), &layer.bias));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let m = self.config.modulated_layer;
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let l = i + 1;
            if let Some(w) = &mut layer.weight {
                let name = if l == m { "u" } else { "weight" };
                out.push((format!("mlp.layer{l}.{name}"), w));
            }
            out.push((format!("mlp.layer{l}.bias"), &mut layer.bias));
        }
        out
    }
}

impl<T: Scalar> ComposerMatrix<T> {
    /// `V ~ N(0, 1)`; `U⁽ⁿ⁾ ~ N(0, 1/sqrt(r d))` for `both_factors`.
    pub fn random(config: &MlpConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (input, output) = config.modulated_dims();
        let v = normal_tensor(rng, &[config.rank, input], 1.0)?;
        let u = match config.variant {
            Variant::BothFactors => {
                let std = 1.0 / ((config.rank * config.hidden) as f64).sqrt();
                Some(normal_tensor(rng, &[output, config.rank], std)?)
            }
            _ => None,
        };
        Ok(Self { v, u, instance: None })
    }

    pub fn zeros(config: &MlpConfig) -> Self {
        let (input, output) = config.modulated_dims();
        Self {
            v: Tensor::zeros(&[config.rank, input]),
            u: (config.variant == Variant::BothFactors).then(|| Tensor::zeros(&[output, config.rank])),
            instance: None,
        }
    }

    pub fn from_v(v: Tensor<T>) -> Self {
        Self {
            v,
            u: None,
            instance: None,
        }
    }

    pub fn check_shape(&self, config: &MlpConfig) -> Result<()> {
        let (input, output) = config.modulated_dims();
        if self.v.shape() != [config.rank, input] {
            return Err(Error::Config(format!(
                "composer V has shape {:?}, expected [{}, {input}]",
                self.v.shape(),
                config.rank
            )));
        }
        let need_u = config.variant == Variant::BothFactors;
        match (&self.u, need_u) {
            (Some(u), true) if u.shape() == [output, config.rank] => Ok(()),
            (None, false) => Ok(()),
            _ => Err(Error::Config(format!(
                "composer U presence/shape does not match variant {}",
                config.variant.name()
            ))),
        }
    }

    /// Squared Frobenius norm over all instance-specific entries.
    pub fn norm_sq(&self) -> Result<Tensor<T>> {
        let mut acc = self.v.mul(&self.v)?.sum_all()?;
        if let Some(u) = &self.u {
            acc = acc.add(&u.mul(u)?.sum_all()?)?;
        }
        Ok(acc)
    }
}

impl<T: Scalar> Params<T> for ComposerMatrix<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![("composer.v".to_string(), &self.v)];
        if let Some(u) = &self.u {
            out.push(("composer.u".to_string(), u));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = vec![("composer.v".to_string(), &mut self.v)];
        if let Some(u) = &mut self.u {
            out.push(("composer.u".to_string(), u));
        }
        out
    }
}

/// The modulated weight for one ablation arm.
///
/// `shared_u` is the shared factor (`factorized_uv`, `hadamard`); `u` on the
/// composer is the instance factor (`both_factors`).
pub fn compose_weight<T: Scalar>(
    variant: Variant,
    shared_u: Option<&Tensor<T>>,
    composer: &ComposerMatrix<T>,
) -> Result<Tensor<T>> {
    let missing = |what: &str| Error::Config(format!("variant {} needs {what}", variant.name()));
    let v = &composer.v;
    Ok(match variant {
        Variant::FactorizedUv => shared_u.ok_or_else(|| missing("a shared U"))?.matmul(v)?,
        Variant::DirectV => v.clone(),
        Variant::Hadamard => {
            let u = shared_u.ok_or_else(|| missing("a shared U"))?;
            if u.shape() != v.shape() {
                return Err(Error::Config(format!(
                    "hadamard needs U and V of equal shape (r = d), got {:?} and {:?}",
                    u.shape(),
                    v.shape()
                )));
            }
            u.mul(v)?
        }
        Variant::BothFactors => composer.u.as_ref().ok_or_else(|| missing("an instance U"))?.matmul(v)?,
    })
}

/// Re-parameterises each row to zero mean and unit variance over its inputs.
///
/// The variance is floored at [`WS_EPS`], so a constant row maps to zeros and
/// an already standardised row is returned unchanged.
pub fn weight_standardize<T: Scalar>(w: &Tensor<T>) -> Result<Tensor<T>> {
    let centered = w.sub(&w.mean_cols()?)?;
    let var = centered.mul(&centered)?.mean_cols()?;
    let eps = T::from_f64(WS_EPS);
    let floored = var.add_scalar(-eps)?.relu()?.add_scalar(eps)?;
    Ok(centered.mul(&floored.powf(T::from_f64(-0.5))?)?)
}

/// Output plus the post-activation of every hidden layer (`z_1 .. z_{L-1}`).
#[derive(Debug, Clone)]
pub struct ForwardTrace<T: Scalar> {
    pub output: Tensor<T>,
    pub hidden: Vec<Tensor<T>>,
}

/// Effective weight of 1-based layer `layer`.
///
/// With weight standardization enabled every row is standardised and then
/// scaled by `1/sqrt(fan_in)`, so pre-activations keep the scale of the
/// layer input instead of growing by `sqrt(fan_in)` per layer.
pub fn layer_weight<T: Scalar>(
    shared: &SharedParams<T>,
    composer: &ComposerMatrix<T>,
    layer: usize,
) -> Result<Tensor<T>> {
    let cfg = &shared.config;
    let raw = if layer == cfg.modulated_layer {
        compose_weight(cfg.variant, shared.layers[layer - 1].weight.as_ref(), composer)?
    } else {
        shared.layers[layer - 1]
            .weight
            .clone()
            .ok_or_else(|| Error::Config(format!("layer {layer} has no weight")))?
    };
    let (input, output) = cfg.layer_dims(layer);
    if raw.shape() != [output, input] {
        return Err(Error::Config(format!(
            "layer {layer} weight has shape {:?}, expected [{output}, {input}]",
            raw.shape()
        )));
    }
    if cfg.weight_standardization {
        Ok(weight_standardize(&raw)?.scale(T::from_f64(1.0 / (input as f64).sqrt()))?)
    } else {
        Ok(raw)
    }
}

/// Runs the MLP on precomputed Fourier features `gamma` (`M x d_f`).
pub fn forward_features<T: Scalar>(
    shared: &SharedParams<T>,
    composer: &ComposerMatrix<T>,
    gamma: &Tensor<T>,
    keep_hidden: bool,
) -> Result<ForwardTrace<T>> {
    let cfg = &shared.config;
    let mut x = gamma.clone();
    let mut hidden = Vec::new();
    for l in 1..=cfg.layers {
        let w = layer_weight(shared, composer, l)?;
        let pre = x.matmul_t(false, &w, true)?.add(&shared.layers[l - 1].bias)?;
        x = if l < cfg.layers { pre.relu()? } else { pre };
        if !x.all_finite() {
            let what = if l < cfg.layers {
                format!("hidden layer {l}")
            } else {
                "output layer".into()
            };
            return Err(Error::NonFinite(what));
        }
        if keep_hidden && l < cfg.layers {
            hidden.push(x.clone());
        }
    }
    Ok(ForwardTrace { output: x, hidden })
}

/// Predicted `M x d_out` features at `coords` (`M x d_in`, in `[-1, 1]`).
pub fn forward<T: Scalar>(
    shared: &SharedParams<T>,
    composer: &ComposerMatrix<T>,
    coords: &Tensor<T>,
) -> Result<Tensor<T>> {
    let gamma = shared.fourier.encode(coords)?;
    Ok(forward_features(shared, composer, &gamma, false)?.output)
}

/// Pre-activation `W_l z_{l-1} + b_l` of 1-based layer `layer`.
pub fn pre_activation<T: Scalar>(
    shared: &SharedParams<T>,
    composer: &ComposerMatrix<T>,
    gamma: &Tensor<T>,
    layer: usize,
) -> Result<Tensor<T>> {
    let input = if layer == 1 {
        gamma.clone()
    } else {
        forward_features(shared, composer, gamma, true)?.hidden[layer - 2].clone()
    };
    let w = layer_weight(shared, composer, layer)?;
    Ok(input.matmul_t(false, &w, true)?.add(&shared.layers[layer - 1].bias)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::FourierConfig;

    fn small(variant: Variant, rank: usize) -> MlpConfig {
        MlpConfig {
            layers: 4,
            hidden: 6,
            rank,
            d_out: 2,
            modulated_layer: 2,
            variant,
            fourier: FourierConfig {
                d_in: 2,
                d_f: 8,
                sigma: 1.0,
                seed: 3,
            },
            weight_standardization: true,
        }
    }

    #[test]
    fn identity_u_gives_v() {
        let v = Tensor::<f64>::from_f64(&[3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]).unwrap();
        let c = ComposerMatrix::from_v(v.clone());
        let w = compose_weight(Variant::FactorizedUv, Some(&Tensor::eye(3)), &c).unwrap();
        assert_eq!(w.data(), v.data());
        let w = compose_weight(Variant::Hadamard, Some(&Tensor::ones(&[3, 3])), &c).unwrap();
        assert_eq!(w.data(), v.data());
        let w = compose_weight::<f64>(Variant::DirectV, None, &c).unwrap();
        assert_eq!(w.data(), v.data());
    }

    #[test]
    fn rank_mismatch_is_config_error() {
        assert!(matches!(small(Variant::DirectV, 3).validate(), Err(Error::Config(_))));
        assert!(matches!(small(Variant::Hadamard, 4).validate(), Err(Error::Config(_))));
        assert!(small(Variant::Hadamard, 6).validate().is_ok());
        let c = ComposerMatrix::from_v(Tensor::<f64>::zeros(&[3, 6]));
        assert!(compose_weight(Variant::Hadamard, Some(&Tensor::zeros(&[6, 6])), &c).is_err());
    }

    #[test]
    fn standardize_cases() {
        let unit = Tensor::<f64>::from_f64(&[1, 4], &[1.0, -1.0, 1.0, -1.0]).unwrap();
        let out = weight_standardize(&unit).unwrap();
        for (a, b) in out.data().iter().zip(unit.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let constant = Tensor::<f64>::full(&[2, 5], 3.0);
        assert!(weight_standardize(&constant).unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn standardize_random_rows_have_unit_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w: Tensor<f64> = uniform_tensor(&mut rng, &[4, 6], 3.0).unwrap();
        let s = weight_standardize(&w).unwrap();
        for row in s.data().chunks(6) {
            let mean: f64 = row.iter().sum::<f64>() / 6.0;
            let var: f64 = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-7);
            assert!((var - 1.0).abs() < 1e-4);
        }
        let twice = weight_standardize(&s).unwrap();
        for (a, b) in twice.data().iter().zip(s.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_parameters_output_final_bias() {
        let cfg = small(Variant::FactorizedUv, 3);
        let mut shared = SharedParams::<f64>::init(&cfg, 0).unwrap().zeroed();
        shared.layers[3].bias = Tensor::from_f64(&[2], &[0.25, -0.5]).unwrap();
        let coords = Tensor::from_f64(&[3, 2], &[0.0, 0.1, -0.5, 0.9, 1.0, -1.0]).unwrap();
        let out = forward(&shared, &ComposerMatrix::zeros(&cfg), &coords).unwrap();
        assert_eq!(out.data(), &[0.25, -0.5, 0.25, -0.5, 0.25, -0.5]);
    }

    #[test]
    fn equal_composers_give_equal_outputs() {
        let cfg = small(Variant::FactorizedUv, 3);
        let shared = SharedParams::<f64>::init(&cfg, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = ComposerMatrix::random(&cfg, &mut rng).unwrap();
        let mut b = a.clone();
        b.instance = Some(9);
        let coords = Tensor::from_f64(&[2, 2], &[0.3, -0.3, 0.7, 0.2]).unwrap();
        assert_eq!(
            forward(&shared, &a, &coords).unwrap().data(),
            forward(&shared, &b, &coords).unwrap().data()
        );
        let c = ComposerMatrix::random(&cfg, &mut rng).unwrap();
        assert_ne!(
            forward(&shared, &a, &coords).unwrap().data(),
            forward(&shared, &c, &coords).unwrap().data()
        );
    }

    #[test]
    fn layer_count_and_param_names() {
        let cfg = small(Variant::FactorizedUv, 3);
        let shared = SharedParams::<f64>::init(&cfg, 0).unwrap();
        let names: Vec<String> = shared.params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.iter().filter(|n| n.ends_with(".weight")).count(), cfg.layers - 1);
        assert!(names.contains(&"mlp.layer2.u".to_string()));
        assert_eq!(shared.composer_u().unwrap().shape(), &[6, 3]);
        // layers after the modulated one: L - 2 instance-agnostic layers
        assert_eq!(cfg.layers - cfg.modulated_layer, cfg.layers - 2);
    }

    #[test]
    fn modulating_first_and_last_layer_reshapes_factors() {
        let mut cfg = small(Variant::FactorizedUv, 3);
        cfg.modulated_layer = 1;
        let shared = SharedParams::<f64>::init(&cfg, 0).unwrap();
        assert_eq!(shared.composer_u().unwrap().shape(), &[6, 3]);
        assert_eq!(ComposerMatrix::<f64>::zeros(&cfg).v.shape(), &[3, 8]);
        cfg.modulated_layer = 4;
        let shared = SharedParams::<f64>::init(&cfg, 0).unwrap();
        assert_eq!(shared.composer_u().unwrap().shape(), &[2, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = ComposerMatrix::random(&cfg, &mut rng).unwrap();
        let out = forward(&shared, &c, &Tensor::zeros(&[4, 2])).unwrap();
        assert_eq!(out.shape(), &[4, 2]);
    }

    #[test]
    fn non_finite_activation_names_layer() {
        let cfg = small(Variant::FactorizedUv, 3);
        let mut shared = SharedParams::<f64>::init(&cfg, 0).unwrap();
        shared.layers[2].bias = Tensor::full(&[6], f64::INFINITY);
        let err = forward(&shared, &ComposerMatrix::zeros(&cfg), &Tensor::zeros(&[1, 2])).unwrap_err();
        match err {
            Error::NonFinite(what) => assert!(what.contains("layer 3"), "{what}"),
            other => panic!("{other:?}"),
        }
    }
}
