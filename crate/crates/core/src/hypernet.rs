//! Transformer encoder mapping data tokens plus `r` learnable query tokens to
//! the rows of the instance composer.

use composer_autodiff::nn::{layer_norm, scaled_dot_attention};
use composer_autodiff::{Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{HypernetConfig, MlpConfig, Variant};
use crate::error::{Error, Result};
use crate::model::ComposerMatrix;
use crate::params::Params;
use crate::tokenize::{token_geometry, TokenSequence};

const LN_EPS: f64 = 1e-5;
const EMBED_STD: f64 = 0.02;

/// One pre-norm encoder block.
#[derive(Debug, Clone)]
pub struct Block<T: Scalar> {
    pub ln1_gain: Tensor<T>,
    pub ln1_shift: Tensor<T>,
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub bo: Tensor<T>,
    pub ln2_gain: Tensor<T>,
    pub ln2_shift: Tensor<T>,
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Hypernet<T: Scalar> {
    pub config: HypernetConfig,
    pub rank: usize,
    /// Patch projection `patch_dim x d_model`.
    pub w_in: Tensor<T>,
    pub b_in: Tensor<T>,
    /// Learned positions for data tokens, `max_tokens x d_model`.
    pub pos: Tensor<T>,
    /// Query tokens and their own positions, `r x d_model` each.
    pub queries: Tensor<T>,
    pub query_pos: Tensor<T>,
    pub blocks: Vec<Block<T>>,
    pub ln_gain: Tensor<T>,
    pub ln_shift: Tensor<T>,
    /// Maps a query output to one row of `V`.
    pub head_w: Tensor<T>,
    pub head_b: Tensor<T>,
    /// Maps a query output to one column of `U` (`both_factors` only).
    pub head_u: Option<(Tensor<T>, Tensor<T>)>,
}

struct Init {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl Init {
    fn normal<T: Scalar>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        let n = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| std * self.normal.sample(&mut self.rng)).collect();
        Tensor::from_f64(shape, &data).expect("shape matches data")
    }

    /// Embedding tables.
    fn embedding<T: Scalar>(&mut self, shape: &[usize]) -> Tensor<T> {
        self.normal(shape, EMBED_STD)
    }

    /// Projection matrices, `N(0, 1/fan_in)`.
    fn dense<T: Scalar>(&mut self, shape: &[usize]) -> Tensor<T> {
        self.normal(shape, 1.0 / (shape[0] as f64).sqrt())
    }
}

impl<T: Scalar> Hypernet<T> {
    /// Projections from `N(0, 1/fan_in)`, embeddings from `N(0, 0.02²)`, zero
    /// biases, unit layer-norm gains.
    ///
    /// `dims`/`channels` describe the instances so the patch width is known.
    pub fn init(config: &HypernetConfig, mlp: &MlpConfig, dims: &[usize], channels: usize, seed: u64) -> Result<Self> {
        config.transformer.validate()?;
        mlp.validate()?;
        let (tokens, patch_dim) = token_geometry(&config.tokenizer, dims, channels)?;
        let tc = &config.transformer;
        if tokens > tc.max_tokens {
            return Err(Error::Config(format!(
                "{tokens} data tokens exceed the {} positional slots",
                tc.max_tokens
            )));
        }
        let d = tc.d_model;
        let ff = d * tc.ff_mult;
        let (v_cols, u_rows) = mlp.modulated_dims();
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, 1.0).expect("valid std"),
        };
        let blocks = (0..tc.blocks)
            .map(|_| Block {
                ln1_gain: Tensor::ones(&[d]),
                ln1_shift: Tensor::zeros(&[d]),
                wq: init.dense(&[d, d]),
                wk: init.dense(&[d, d]),
                wv: init.dense(&[d, d]),
                wo: init.dense(&[d, d]),
                bo: Tensor::zeros(&[d]),
                ln2_gain: Tensor::ones(&[d]),
                ln2_shift: Tensor::zeros(&[d]),
                w1: init.dense(&[d, ff]),
                b1: Tensor::zeros(&[ff]),
                w2: init.dense(&[ff, d]),
                b2: Tensor::zeros(&[d]),
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            rank: mlp.rank,
            w_in: init.dense(&[patch_dim, d]),
            b_in: Tensor::zeros(&[d]),
            pos: init.embedding(&[tc.max_tokens, d]),
            queries: init.embedding(&[mlp.rank, d]),
            query_pos: init.embedding(&[mlp.rank, d]),
            blocks,
            ln_gain: Tensor::ones(&[d]),
            ln_shift: Tensor::zeros(&[d]),
            head_w: init.dense(&[d, v_cols]),
            head_b: Tensor::zeros(&[v_cols]),
            head_u: (mlp.variant == Variant::BothFactors).then(|| (init.dense(&[d, u_rows]), Tensor::zeros(&[u_rows]))),
        })
    }

    /// Projected data tokens plus their positional embeddings, `T x d_model`.
    pub fn embed(&self, tokens: &TokenSequence<T>) -> Result<Tensor<T>> {
        let t = tokens.len();
        if t > self.config.transformer.max_tokens {
            return Err(Error::Data(format!(
                "{t} data tokens exceed the {} positional slots",
                self.config.transformer.max_tokens
            )));
        }
        if tokens.patch_dim() != self.w_in.shape()[0] {
            return Err(Error::Data(format!(
                "patch vectors have length {}, hypernet expects {}",
                tokens.patch_dim(),
                self.w_in.shape()[0]
            )));
        }
        let x = tokens.patches.matmul(&self.w_in)?.add(&self.b_in)?;
        Ok(x.add(&self.pos.slice_rows(0, t)?)?)
    }

    /// Runs the encoder on already-embedded data tokens and returns the
    /// normalised outputs at the query positions (`r x d_model`).
    pub fn encode(&self, embedded: &Tensor<T>) -> Result<Tensor<T>> {
        let t = embedded.shape()[0];
        let q = self.queries.add(&self.query_pos)?;
        let mut x = Tensor::concat_rows(&[embedded, &q])?;
        let heads = self.config.transformer.heads;
        let hd = self.config.transformer.head_dim;
        for b in &self.blocks {
            let h = layer_norm(&x, &b.ln1_gain, &b.ln1_shift, LN_EPS)?;
            let (qm, km, vm) = (h.matmul(&b.wq)?, h.matmul(&b.wk)?, h.matmul(&b.wv)?);
            let mut outs = Vec::with_capacity(heads);
            for i in 0..heads {
                outs.push(scaled_dot_attention(
                    &qm.slice_cols(i * hd, hd)?,
                    &km.slice_cols(i * hd, hd)?,
                    &vm.slice_cols(i * hd, hd)?,
                )?);
            }
            let refs: Vec<&Tensor<T>> = outs.iter().collect();
            let attn = Tensor::concat_cols(&refs)?.matmul(&b.wo)?.add(&b.bo)?;
            x = x.add(&attn)?;
            let h = layer_norm(&x, &b.ln2_gain, &b.ln2_shift, LN_EPS)?;
            let f = h.matmul(&b.w1)?.add(&b.b1)?.gelu()?.matmul(&b.w2)?.add(&b.b2)?;
            x = x.add(&f)?;
        }
        let x = layer_norm(&x, &self.ln_gain, &self.ln_shift, LN_EPS)?;
        Ok(x.slice_rows(t, self.rank)?)
    }

    /// `V⁽ⁿ⁾` (and `U⁽ⁿ⁾` for `both_factors`) for one instance.
    pub fn predict(&self, tokens: &TokenSequence<T>) -> Result<ComposerMatrix<T>> {
        let out = self.encode(&self.embed(tokens)?)?;
        let v = out.matmul(&self.head_w)?.add(&self.head_b)?;
        let u = match &self.head_u {
            Some((w, b)) => Some(out.matmul(w)?.add(b)?.transpose()?),
            None => None,
        };
        Ok(ComposerMatrix { v, u, instance: None })
    }
}

impl<T: Scalar> Params<T> for Hypernet<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = vec![
            ("hypernet.w_in".into(), &self.w_in),
            ("hypernet.b_in".into(), &self.b_in),
            ("hypernet.pos".into(), &self.pos),
            ("hypernet.queries".into(), &self.queries),
            ("hypernet.query_pos".into(), &self.query_pos),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (name, t) in [
                ("ln1_gain", &b.ln1_gain),
                ("ln1_shift", &b.ln1_shift),
                ("wq", &b.wq),
                ("wk", &b.wk),
                ("wv", &b.wv),
                ("wo", &b.wo),
                ("bo", &b.bo),
                ("ln2_gain", &b.ln2_gain),
                ("ln2_shift", &b.ln2_shift),
                ("w1", &b.w1),
                ("b1", &b.b1),
                ("w2", &b.w2),
                ("b2", &b.b2),
            ] {
                out.push((format!("hypernet.block{i}.{name}"), t));
            }
        }
        out.push(("hypernet.ln_gain".into(), &self.ln_gain));
        out.push(("hypernet.ln_shift".into(), &self.ln_shift));
        out.push(("hypernet.head_w".into(), &self.head_w));
        out.push(("hypernet.head_b".into(), &self.head_b));
        if let Some((w, b)) = &self.head_u {
            out.push(("hypernet.head_u_w".into(), w));
            out.push(("hypernet.head_u_b".into(), b));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<(String, &mut Tensor<T>)> = vec![
            ("hypernet.w_in".into(), &mut self.w_in),
            ("hypernet.b_in".into(), &mut self.b_in),
            ("hypernet.pos".into(), &mut self.pos),
            ("hypernet.queries".into(), &mut self.queries),
            ("hypernet.query_pos".into(), &mut self.query_pos),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (name, t) in [
                ("ln1_gain", &mut b.ln1_gain),
                ("ln1_shift", &mut b.ln1_shift),
                ("wq", &mut b.wq),
                ("wk", &mut b.wk),
                ("wv", &mut b.wv),
                ("wo", &mut b.wo),
                ("bo", &mut b.bo),
                ("ln2_gain", &mut b.ln2_gain),
                ("ln2_shift", &mut b.ln2_shift),
                ("w1", &mut b.w1),
                ("b1", &mut b.b1),
                ("w2", &mut b.w2),
                ("b2", &mut b.b2),
            ] {
                out.push((format!("hypernet.block{i}.{name}"), t));
            }
        }
        out.push(("hypernet.ln_gain".into(), &mut self.ln_gain));
        out.push(("hypernet.ln_shift".into(), &mut self.ln_shift));
        out.push(("hypernet.head_w".into(), &mut self.head_w));
        out.push(("hypernet.head_b".into(), &mut self.head_b));
        if let Some((w, b)) = &mut self.head_u {
            out.push(("hypernet.head_u_w".into(), w));
            out.push(("hypernet.head_u_b".into(), b));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{FourierConfig, TokenizerConfig, TransformerConfig};
    use crate::data::Signal;
    use crate::tokenize::tokenize;

    fn configs(variant: Variant) -> (HypernetConfig, MlpConfig) {
        let hc = HypernetConfig {
            transformer: TransformerConfig {
                blocks: 2,
                heads: 2,
                head_dim: 8,
                d_model: 16,
                max_tokens: 16,
                ff_mult: 4,
            },
            tokenizer: TokenizerConfig::Image { patch: 2, pad_to: None },
        };
        let mlp = MlpConfig {
            layers: 4,
            hidden: 6,
            rank: 3,
            d_out: 1,
            modulated_layer: 2,
            variant,
            fourier: FourierConfig {
                d_in: 2,
                d_f: 8,
                sigma: 1.0,
                seed: 0,
            },
            weight_standardization: true,
        };
        (hc, mlp)
    }

    fn image(seed: u64) -> Signal {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Signal::new(vec![4, 6], 1, (0..24).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn output_shape_is_rank_by_width() {
        let (hc, mlp) = configs(Variant::BothFactors);
        let net = Hypernet::<f64>::init(&hc, &mlp, &[4, 6], 1, 0).unwrap();
        for dims in [[2usize, 2], [4, 6], [8, 4]] {
            let n = dims[0] * dims[1];
            let s = Signal::new(dims.to_vec(), 1, vec![0.5; n]).unwrap();
            let c = net.predict(&tokenize(&hc.tokenizer, &s).unwrap()).unwrap();
            assert_eq!(c.v.shape(), &[3, 6]);
            assert_eq!(c.u.unwrap().shape(), &[6, 3]);
        }
    }

    #[test]
    fn token_overflow_is_rejected() {
        let (hc, mlp) = configs(Variant::FactorizedUv);
        let net = Hypernet::<f64>::init(&hc, &mlp, &[4, 6], 1, 0).unwrap();
        let big = Signal::new(vec![10, 8], 1, vec![0.0; 80]).unwrap();
        assert!(net.predict(&tokenize(&hc.tokenizer, &big).unwrap()).is_err());
        assert!(Hypernet::<f64>::init(&hc, &mlp, &[10, 8], 1, 0).is_err());
    }

    #[test]
    fn permuting_tokens_with_positions_is_invariant() {
        let (hc, mlp) = configs(Variant::FactorizedUv);
        let mut net = Hypernet::<f64>::init(&hc, &mlp, &[4, 6], 1, 1).unwrap();
        let tokens = tokenize(&hc.tokenizer, &image(2)).unwrap();
        let base = net.predict(&tokens).unwrap().v;

        let swap = |t: &Tensor<f64>, a: usize, b: usize| {
            let n = t.shape()[1];
            let mut d = t.to_vec();
            for j in 0..n {
                d.swap(a * n + j, b * n + j);
            }
            Tensor::from_vec(t.shape(), d).unwrap()
        };
        let permuted = TokenSequence {
            patches: swap(&tokens.patches, 0, 4),
        };
        net.pos = swap(&net.pos, 0, 4);
        let moved = net.predict(&permuted).unwrap().v;
        for (a, b) in base.data().iter().zip(moved.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn different_instances_differ() {
        let (hc, mlp) = configs(Variant::FactorizedUv);
        let net = Hypernet::<f64>::init(&hc, &mlp, &[4, 6], 1, 3).unwrap();
        let a = net.predict(&tokenize(&hc.tokenizer, &image(0)).unwrap()).unwrap().v;
        let b = net.predict(&tokenize(&hc.tokenizer, &image(1)).unwrap()).unwrap().v;
        let dist: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum();
        assert!(dist > 0.0);
    }
}
