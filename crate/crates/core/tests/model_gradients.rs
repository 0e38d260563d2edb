//! Finite-difference checks of the full model: MLP alone and hypernet + MLP.

use composer_autodiff::gradcheck::rel_error;
use composer_autodiff::nn::mse;
use composer_autodiff::{GradMode, Graph, Tensor};
use composer_inr::config::{FourierConfig, HypernetConfig, MlpConfig, TokenizerConfig, TransformerConfig, Variant};
use composer_inr::data::{gratings, grid};
use composer_inr::hypernet::Hypernet;
use composer_inr::model::{forward, forward_features, ComposerMatrix, SharedParams};
use composer_inr::params::Params;
use composer_inr::tokenize::tokenize;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mlp(variant: Variant, layer: usize, rank: usize) -> MlpConfig {
    MlpConfig {
        layers: 4,
        hidden: 8,
        rank,
        d_out: 2,
        modulated_layer: layer,
        variant,
        fourier: FourierConfig {
            d_in: 2,
            d_f: 8,
            sigma: 1.5,
            seed: 4,
        },
        weight_standardization: true,
    }
}

fn random_coords(rng: &mut ChaCha8Rng, m: usize) -> Tensor<f64> {
    let data: Vec<f64> = (0..2 * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(&[m, 2], data).unwrap()
}

/// Perturbs a handful of entries of every parameter and compares with the
/// analytic gradient.
fn check_entries(
    params: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    loss: impl Fn(&[Tensor<f64>]) -> f64,
    rng: &mut ChaCha8Rng,
    per_tensor: usize,
    h: f64,
    tol: f64,
) {
    for (i, p) in params.iter().enumerate() {
        let n = p.numel();
        let picks: Vec<usize> = (0..per_tensor.min(n)).map(|_| rng.gen_range(0..n)).collect();
        let mut numeric = Vec::new();
        let mut exact = Vec::new();
        for &j in &picks {
            let mut shifted = params.to_vec();
            let mut d = p.to_vec();
            d[j] += h;
            shifted[i] = Tensor::from_vec(p.shape(), d.clone()).unwrap();
            let up = loss(&shifted);
            d[j] -= 2.0 * h;
            shifted[i] = Tensor::from_vec(p.shape(), d).unwrap();
            let down = loss(&shifted);
            numeric.push((up - down) / (2.0 * h));
            exact.push(analytic[i].data()[j]);
        }
        let err = rel_error(&exact, &numeric, 1e-6);
        assert!(
            err < tol,
            "tensor {i}: rel err {err:e}\n exact {exact:?}\n numeric {numeric:?}"
        );
    }
}

#[test]
fn mlp_gradients_match_finite_differences() {
    let cases = [
        (Variant::FactorizedUv, 2, 3),
        (Variant::FactorizedUv, 1, 3),
        (Variant::FactorizedUv, 4, 3),
        (Variant::DirectV, 2, 8),
        (Variant::Hadamard, 3, 8),
        (Variant::BothFactors, 2, 3),
    ];
    for seed in 0..20u64 {
        let (variant, layer, rank) = cases[seed as usize % cases.len()];
        let cfg = mlp(variant, layer, rank);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shared = SharedParams::<f64>::init(&cfg, seed).unwrap();
        let composer = ComposerMatrix::random(&cfg, &mut rng).unwrap();
        let coords = random_coords(&mut rng, 6);
        let target: Vec<f64> = (0..12).map(|_| rng.gen_range(0.0..1.0)).collect();
        let target = Tensor::from_vec(&[6, 2], target).unwrap();

        let n_shared = shared.params().len();
        let mut flat: Vec<Tensor<f64>> = shared.tensors().into_iter().cloned().collect();
        flat.extend(composer.tensors().into_iter().cloned());
        let rebuild = |p: &[Tensor<f64>]| {
            let mut s = shared.clone();
            for ((_, slot), t) in s.params_mut().into_iter().zip(&p[..n_shared]) {
                *slot = t.clone();
            }
            let mut c = composer.clone();
            for ((_, slot), t) in c.params_mut().into_iter().zip(&p[n_shared..]) {
                *slot = t.clone();
            }
            (s, c)
        };
        let loss_of = |p: &[Tensor<f64>]| {
            let (s, c) = rebuild(p);
            mse(&forward(&s, &c, &coords).unwrap(), &target)
                .unwrap()
                .item()
                .unwrap()
        };

        let g = Graph::new();
        let leaves: Vec<Tensor<f64>> = flat.iter().map(|t| g.leaf(t)).collect();
        let (s, c) = rebuild(&leaves);
        let loss = mse(&forward(&s, &c, &coords).unwrap(), &target).unwrap();
        let refs: Vec<&Tensor<f64>> = leaves.iter().collect();
        let grads = g.grad(&loss, &refs, GradMode::Detached).unwrap();
        check_entries(&flat, &grads, loss_of, &mut rng, 6, 1e-5, 1e-5);
    }
}

#[test]
fn hypernet_end_to_end_gradients_match_finite_differences() {
    let hc = HypernetConfig {
        transformer: TransformerConfig {
            blocks: 2,
            heads: 2,
            head_dim: 16,
            d_model: 32,
            max_tokens: 16,
            ff_mult: 4,
        },
        tokenizer: TokenizerConfig::Image { patch: 2, pad_to: None },
    };
    for seed in 0..20u64 {
        let variant = if seed % 2 == 0 {
            Variant::FactorizedUv
        } else {
            Variant::BothFactors
        };
        let cfg = MlpConfig {
            d_out: 1,
            ..mlp(variant, 2, 3)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let shared = SharedParams::<f64>::init(&cfg, seed).unwrap();
        let net = Hypernet::<f64>::init(&hc, &cfg, &[4, 4], 1, seed).unwrap();
        let signals: Vec<_> = gratings(2, 4, seed).into_iter().map(|(s, _)| s).collect();
        let gamma = shared.fourier.encode(&grid(&[4, 4]).unwrap()).unwrap();

        let n_shared = shared.params().len();
        let mut flat: Vec<Tensor<f64>> = shared.tensors().into_iter().cloned().collect();
        flat.extend(net.tensors().into_iter().cloned());
        let rebuild = |p: &[Tensor<f64>]| {
            let mut s = shared.clone();
            for ((_, slot), t) in s.params_mut().into_iter().zip(&p[..n_shared]) {
                *slot = t.clone();
            }
            let mut h = net.clone();
            for ((_, slot), t) in h.params_mut().into_iter().zip(&p[n_shared..]) {
                *slot = t.clone();
            }
            (s, h)
        };
        let batch_loss = |p: &[Tensor<f64>]| -> Tensor<f64> {
            let (s, h) = rebuild(p);
            let mut total = Tensor::scalar(0.0);
            for sig in &signals {
                let c = h.predict(&tokenize(&hc.tokenizer, sig).unwrap()).unwrap();
                let pred = forward_features(&s, &c, &gamma, false).unwrap().output;
                total = total.add(&mse(&pred, &sig.targets().unwrap()).unwrap()).unwrap();
            }
            total.scale(0.5).unwrap()
        };

        let g = Graph::new();
        let leaves: Vec<Tensor<f64>> = flat.iter().map(|t| g.leaf(t)).collect();
        let loss = batch_loss(&leaves);
        let refs: Vec<&Tensor<f64>> = leaves.iter().collect();
        let grads = g.grad(&loss, &refs, GradMode::Detached).unwrap();
        // the hypernet moves many MLP pre-activations at once, so a smaller
        // stencil keeps clear of ReLU kinks
        check_entries(
            &flat,
            &grads,
            |p| batch_loss(p).item().unwrap(),
            &mut rng,
            2,
            1e-6,
            1e-4,
        );
    }
}
