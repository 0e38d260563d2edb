//! Declarative experiment description, serialised verbatim into checkpoints,
//! reports and run manifests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

/// How the modulated weight is formed from shared and per-instance factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `W = U V` with shared `U` (the default).
    FactorizedUv,
    /// `W = V`; requires `rank` equal to the layer's output width.
    DirectV,
    /// `W = U ⊙ V`; requires `rank` equal to the layer's output width.
    Hadamard,
    /// `W = U⁽ⁿ⁾ V⁽ⁿ⁾` with both factors instance-specific.
    BothFactors,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::DirectV,
        Variant::BothFactors,
        Variant::Hadamard,
        Variant::FactorizedUv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::FactorizedUv => "factorized_uv",
            Variant::DirectV => "direct_v",
            Variant::Hadamard => "hadamard",
            Variant::BothFactors => "both_factors",
        }
    }

    /// Whether the modulated layer carries a shared `U`.
    pub fn has_shared_u(self) -> bool {
        matches!(self, Variant::FactorizedUv | Variant::Hadamard)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierConfig {
    pub d_in: usize,
    /// Feature width; must be even.
    pub d_f: usize,
    /// Standard deviation of the random frequency matrix.
    pub sigma: f64,
    pub seed: u64,
}

impl FourierConfig {
    pub fn image() -> Self {
        Self {
            d_in: 2,
            d_f: 256,
            sigma: 10.0,
            seed: 0,
        }
    }

    pub fn audio() -> Self {
        Self {
            d_in: 1,
            d_f: 256,
            sigma: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Total layer count `L` (including the Fourier-feature layer and output layer).
    pub layers: usize,
    /// Hidden width `d`.
    pub hidden: usize,
    /// Composer rank `r`.
    pub rank: usize,
    pub d_out: usize,
    /// 1-based index of the modulated layer.
    pub modulated_layer: usize,
    pub variant: Variant,
    pub fourier: FourierConfig,
    #[serde(default = "default_true")]
    pub weight_standardization: bool,
}

fn default_true() -> bool {
    true
}

impl MlpConfig {
    /// `(inputs, outputs)` of the 1-based layer `layer`.
    pub fn layer_dims(&self, layer: usize) -> (usize, usize) {
        let input = if layer == 1 { self.fourier.d_f } else { self.hidden };
        let output = if layer == self.layers { self.d_out } else { self.hidden };
        (input, output)
    }

    pub fn modulated_dims(&self) -> (usize, usize) {
        self.layer_dims(self.modulated_layer)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 2 {
            return config_err(format!("need at least 2 layers, got {}", self.layers));
        }
        if self.hidden == 0 || self.rank == 0 || self.d_out == 0 || self.fourier.d_in == 0 {
            return config_err("hidden width, rank, d_in and d_out must be positive");
        }
        if self.fourier.d_f == 0 || !self.fourier.d_f.is_multiple_of(2) {
            return config_err(format!("d_f must be even and positive, got {}", self.fourier.d_f));
        }
        if !(self.fourier.sigma > 0.0) {
            return config_err(format!("Fourier scale must be positive, got {}", self.fourier.sigma));
        }
        if self.modulated_layer < 1 || self.modulated_layer > self.layers {
            return config_err(format!(
                "modulated layer {} outside 1..={}",
                self.modulated_layer, self.layers
            ));
        }
        let (_, out) = self.modulated_dims();
        if matches!(self.variant, Variant::DirectV | Variant::Hadamard) && self.rank != out {
            return config_err(format!(
                "variant {} needs rank == layer output width ({}), got rank {}",
                self.variant.name(),
                out,
                self.rank
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub blocks: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub d_model: usize,
    /// Capacity of the learned positional table for data tokens.
    pub max_tokens: usize,
    #[serde(default = "default_ff_mult")]
    pub ff_mult: usize,
}

fn default_ff_mult() -> usize {
    4
}

impl TransformerConfig {
    /// Six blocks, twelve 64-wide heads.
    pub fn full() -> Self {
        Self {
            blocks: 6,
            heads: 12,
            head_dim: 64,
            d_model: 768,
            max_tokens: 1024,
            ff_mult: 4,
        }
    }

    /// Laptop-sized default.
    pub fn desk() -> Self {
        Self {
            blocks: 2,
            heads: 4,
            head_dim: 16,
            d_model: 64,
            max_tokens: 256,
            ff_mult: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.heads == 0 || self.head_dim == 0 {
            return config_err("transformer blocks, heads and head_dim must be positive");
        }
        if self.d_model != self.heads * self.head_dim {
            return config_err(format!(
                "d_model {} != heads {} x head_dim {}",
                self.d_model, self.heads, self.head_dim
            ));
        }
        Ok(())
    }
}

/// How an instance is cut into data tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TokenizerConfig {
    Image {
        patch: usize,
        /// Zero-pad to this `[height, width]` before patchifying.
        #[serde(default)]
        pad_to: Option<[usize; 2]>,
    },
    Audio {
        patch: usize,
    },
}

impl TokenizerConfig {
    pub fn patch(&self) -> usize {
        match self {
            TokenizerConfig::Image { patch, .. } | TokenizerConfig::Audio { patch } => *patch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypernetConfig {
    pub transformer: TransformerConfig,
    pub tokenizer: TokenizerConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaMode {
    /// Adapt only the composer, differentiating through the inner loop.
    CaviaComposer,
    /// Adapt every MLP weight without norm scaling.
    MamlAllWeights,
    /// Composer-only adaptation with the inner updates treated as constants.
    FirstOrderApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterOptimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    pub inner_steps: usize,
    pub inner_lr: f64,
    pub outer_lr: f64,
    pub mode: MetaMode,
    pub batch_size: usize,
    #[serde(default = "default_outer_optimizer")]
    pub outer_optimizer: OuterOptimizer,
    /// Upper bound on activations retained per instance graph.
    #[serde(default)]
    pub max_graph_bytes: Option<usize>,
}

fn default_outer_optimizer() -> OuterOptimizer {
    OuterOptimizer::Adam
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            inner_steps: 2,
            inner_lr: 0.01,
            outer_lr: 0.001,
            mode: MetaMode::CaviaComposer,
            batch_size: 8,
            outer_optimizer: OuterOptimizer::Adam,
            max_graph_bytes: None,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inner_lr > 0.0) || !(self.outer_lr > 0.0) {
            return config_err("meta learning rates must be positive");
        }
        if self.batch_size == 0 {
            return config_err("meta batch size must be positive");
        }
        Ok(())
    }
}

/// Which network predicts the composer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predictor {
    Hypernet(HypernetConfig),
    Meta(MetaConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    ImageDir,
    WavDir,
    SyntheticGratings,
    SyntheticGaussians,
    SyntheticTones,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    /// Source directory for `image_dir` / `wav_dir`.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Instance count for synthetic kinds.
    #[serde(default)]
    pub count: usize,
    /// Training instances; the rest form the test split.
    pub train: usize,
    /// Image side length, or samples per audio window.
    pub resolution: usize,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: u32,
    pub seed: u64,
}

fn default_sample_rate() -> u32 {
    16_000
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: MlpConfig,
    pub predictor: Predictor,
    #[serde(default)]
    pub optimizer: AdamConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Fraction of coordinates used per instance in the training loss.
    #[serde(default = "default_subsample")]
    pub subsample: f64,
    pub dataset: DatasetSpec,
    #[serde(default = "default_precision")]
    pub precision: Precision,
    /// Write a checkpoint every this many steps (0 disables).
    #[serde(default)]
    pub checkpoint_every: usize,
}

fn default_subsample() -> f64 {
    1.0
}

fn default_precision() -> Precision {
    Precision::F32
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        match &self.predictor {
            Predictor::Hypernet(h) => {
                h.transformer.validate()?;
                if h.tokenizer.patch() == 0 {
                    return config_err("patch size must be positive");
                }
            }
            Predictor::Meta(m) => m.validate()?,
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return config_err(format!("subsample fraction must be in (0, 1], got {}", self.subsample));
        }
        if self.batch_size == 0 {
            return config_err("batch size must be positive");
        }
        if !(self.optimizer.lr > 0.0) {
            return config_err("learning rate must be positive");
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Desk-scale grating experiment: 32x32 images, d = r = 64, five layers,
    /// tiny transformer.
    pub fn desk_gratings() -> Self {
        Self {
            name: "desk-gratings".into(),
            model: MlpConfig {
                layers: 5,
                hidden: 64,
                rank: 64,
                d_out: 1,
                modulated_layer: 2,
                variant: Variant::FactorizedUv,
                fourier: FourierConfig {
                    d_in: 2,
                    d_f: 64,
                    sigma: 2.0,
                    seed: 0,
                },
                weight_standardization: true,
            },
            predictor: Predictor::Hypernet(HypernetConfig {
                transformer: TransformerConfig::desk(),
                tokenizer: TokenizerConfig::Image { patch: 4, pad_to: None },
            }),
            optimizer: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            steps: 3000,
            batch_size: 8,
            seed: 0,
            subsample: 0.25,
            dataset: DatasetSpec {
                kind: DatasetKind::SyntheticGratings,
                path: None,
                count: 512,
                train: 448,
                resolution: 32,
                sample_rate: 16_000,
                seed: 0,
            },
            precision: Precision::F32,
            checkpoint_every: 0,
        }
    }

    /// [`ExperimentConfig::desk_gratings`] with the meta-learned predictor.
    pub fn desk_meta_gratings() -> Self {
        Self {
            name: "desk-meta-gratings".into(),
            predictor: Predictor::Meta(MetaConfig::default()),
            steps: 300,
            ..Self::desk_gratings()
        }
    }
}
