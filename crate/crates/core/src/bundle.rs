//! A trained model: shared MLP parameters plus the composer predictor.

use std::path::Path;

use composer_autodiff::{Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, Geometry, Header, NamedTensor};
use crate::config::{ExperimentConfig, MetaConfig, MetaMode, Predictor};
use crate::data::{grid, Signal};
use crate::error::{Error, Result};
use crate::fourier::FourierFeatures;
use crate::hypernet::Hypernet;
use crate::meta::{inner_adapt, maml_adapt_all, InnerGrad};
use crate::model::{forward_features, ComposerMatrix, SharedParams};
use crate::params::Params;
use crate::tokenize::{token_geometry, tokenize};

const FOURIER_NAME: &str = "mlp.fourier.b";

#[derive(Debug, Clone)]
pub enum PredictorState<T: Scalar> {
    Hypernet(Hypernet<T>),
    /// Learned composer initialization `φ`.
    Meta(ComposerMatrix<T>),
}

#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    pub config: ExperimentConfig,
    pub geometry: Geometry,
    pub shared: SharedParams<T>,
    pub predictor: PredictorState<T>,
    /// Optimizer steps taken so far.
    pub step: usize,
}

impl<T: Scalar> Model<T> {
    /// Fresh parameters for instances of the given geometry.
    pub fn init(config: &ExperimentConfig, dims: &[usize], channels: usize) -> Result<Self> {
        config.validate()?;
        let mlp = &config.model;
        if mlp.fourier.d_in != dims.len() {
            return Err(Error::Config(format!(
                "model takes {}-D coordinates but instances have dims {dims:?}",
                mlp.fourier.d_in
            )));
        }
        if mlp.d_out != channels {
            return Err(Error::Config(format!(
                "model predicts {} channels but instances have {channels}",
                mlp.d_out
            )));
        }
        let shared = SharedParams::init(mlp, config.seed)?;
        let (predictor, tokens) = match &config.predictor {
            Predictor::Hypernet(hc) => {
                let net = Hypernet::init(hc, mlp, dims, channels, config.seed.wrapping_add(1))?;
                let (t, p) = token_geometry(&hc.tokenizer, dims, channels)?;
                (PredictorState::Hypernet(net), Some([t, p]))
            }
            Predictor::Meta(_) => {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
                (PredictorState::Meta(ComposerMatrix::random(mlp, &mut rng)?), None)
            }
        };
        Ok(Self {
            config: config.clone(),
            geometry: Geometry {
                dims: dims.to_vec(),
                channels,
                tokens,
            },
            shared,
            predictor,
            step: 0,
        })
    }

    pub fn meta_config(&self) -> Option<&MetaConfig> {
        match &self.config.predictor {
            Predictor::Meta(m) => Some(m),
            Predictor::Hypernet(_) => None,
        }
    }

    /// Every stored tensor in checkpoint order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![(FOURIER_NAME.to_string(), self.shared.fourier.matrix())];
        out.extend(self.shared.params());
        match &self.predictor {
            PredictorState::Hypernet(h) => out.extend(h.params()),
            PredictorState::Meta(c) => out.extend(c.params().into_iter().map(|(n, t)| (format!("meta.init.{n}"), t))),
        }
        out
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let tensors = self
            .named_tensors()
            .into_iter()
            .map(|(name, t)| NamedTensor {
                name,
                shape: t.shape().to_vec(),
                data: t.data().iter().map(|x| x.as_f64() as f32).collect(),
            })
            .collect();
        Checkpoint {
            header: Header {
                config: self.config.clone(),
                geometry: self.geometry.clone(),
                step: self.step,
            },
            tensors,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let g = &ck.header.geometry;
        let mut model = Self::init(&ck.header.config, &g.dims, g.channels)?;
        model.step = ck.header.step;
        let fetch = |name: &str, shape: &[usize]| -> Result<Tensor<T>> {
            let t = ck
                .get(name)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks tensor {name}")))?;
            if t.shape != shape {
                return Err(Error::Data(format!(
                    "checkpoint tensor {name} has shape {:?}, model expects {shape:?}",
                    t.shape
                )));
            }
            let data: Vec<f64> = t.data.iter().map(|&x| f64::from(x)).collect();
            Ok(Tensor::from_f64(shape, &data)?)
        };
        let b = fetch(FOURIER_NAME, model.shared.fourier.matrix().shape())?;
        model.shared.fourier = FourierFeatures::with_matrix(model.config.model.fourier.clone(), b)?;
        for (name, slot) in model.shared.params_mut() {
            *slot = fetch(&name, slot.shape())?;
        }
        match &mut model.predictor {
            PredictorState::Hypernet(h) => {
                for (name, slot) in h.params_mut() {
                    *slot = fetch(&name, slot.shape())?;
                }
            }
            PredictorState::Meta(c) => {
                for (name, slot) in c.params_mut() {
                    *slot = fetch(&format!("meta.init.{name}"), slot.shape())?;
                }
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Content hash of the checkpoint this model serialises to.
    pub fn id(&self) -> String {
        self.to_checkpoint().id()
    }

    /// Fourier features of the full coordinate grid.
    pub fn grid_features(&self) -> Result<Tensor<T>> {
        self.shared.fourier.encode(&grid(&self.geometry.dims)?)
    }

    pub fn check_geometry(&self, signal: &Signal) -> Result<()> {
        if signal.dims != self.geometry.dims || signal.channels != self.geometry.channels {
            return Err(Error::Data(format!(
                "instance geometry {:?}x{} does not match checkpoint geometry {:?}x{}",
                signal.dims, signal.channels, self.geometry.dims, self.geometry.channels
            )));
        }
        Ok(())
    }

    /// Instance-specific parameters for `signal`: the hypernet prediction,
    /// or the inner-loop adaptation from the learned initialization.
    ///
    /// `gamma` must be the full-grid features from [`Model::grid_features`].
    pub fn instance_params(&self, signal: &Signal, gamma: &Tensor<T>) -> Result<(SharedParams<T>, ComposerMatrix<T>)> {
        self.check_geometry(signal)?;
        match (&self.predictor, &self.config.predictor) {
            (PredictorState::Hypernet(h), Predictor::Hypernet(hc)) => {
                let tokens = tokenize(&hc.tokenizer, signal)?;
                Ok((self.shared.clone(), h.predict(&tokens)?.detached()))
            }
            (PredictorState::Meta(init), Predictor::Meta(mc)) => {
                let targets = signal.targets()?;
                if mc.mode == MetaMode::MamlAllWeights {
                    let (s, c, _) = maml_adapt_all(
                        &self.shared,
                        init,
                        gamma,
                        &targets,
                        mc.inner_steps,
                        mc.inner_lr,
                        InnerGrad::FirstOrder,
                    )?;
                    Ok((s, c))
                } else {
                    let (c, _) = inner_adapt(
                        &self.shared,
                        init,
                        gamma,
                        &targets,
                        mc.inner_steps,
                        mc.inner_lr,
                        InnerGrad::FirstOrder,
                    )?;
                    Ok((self.shared.clone(), c))
                }
            }
            _ => Err(Error::Config(
                "predictor state does not match the configured predictor".into(),
            )),
        }
    }

    /// Full-grid reconstruction (`M x C`, row-major).
    pub fn reconstruct(&self, signal: &Signal, gamma: &Tensor<T>) -> Result<Vec<f64>> {
        let (shared, composer) = self.instance_params(signal, gamma)?;
        Ok(forward_features(&shared, &composer, gamma, false)?.output.to_f64_vec())
    }
}
