//! Algebra of the modulated weight, checked against nalgebra's SVD and QR.

use composer_autodiff::Tensor;
use composer_inr::config::{FourierConfig, MlpConfig, Variant};
use composer_inr::model::{compose_weight, pre_activation, weight_standardize, ComposerMatrix, SharedParams};
use composer_inr::params::Params;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn to_matrix(t: &Tensor<f64>) -> DMatrix<f64> {
    let (r, c) = t.dims2().unwrap();
    DMatrix::from_row_slice(r, c, t.data())
}

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
    Tensor::from_vec(&[r, c], (0..r * c).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
}

fn coords(rng: &mut ChaCha8Rng, m: usize) -> Tensor<f64> {
    Tensor::from_vec(&[m, 2], (0..2 * m).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn mlp(hidden: usize, rank: usize, ws: bool) -> MlpConfig {
    MlpConfig {
        layers: 4,
        hidden,
        rank,
        d_out: 3,
        modulated_layer: 2,
        variant: Variant::FactorizedUv,
        fourier: FourierConfig {
            d_in: 2,
            d_f: 8,
            sigma: 2.0,
            seed: 1,
        },
        weight_standardization: ws,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn factorized_weight_has_rank_at_most_r(d in 3usize..24, r_frac in 0.05f64..0.95, seed in 0u64..10_000) {
        let r = ((d as f64 * r_frac) as usize).clamp(1, d - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random(&mut rng, d, r);
        let v = random(&mut rng, r, d);
        let w = compose_weight(Variant::FactorizedUv, Some(&u), &ComposerMatrix::from_v(v)).unwrap();
        let mut sv: Vec<f64> = to_matrix(&w).singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        prop_assert!(sv[r - 1] > 1e-6);
        for s in &sv[r..] {
            prop_assert!(*s < 1e-10, "singular value {s:e} beyond rank {r}");
        }
    }

    #[test]
    fn identity_u_returns_v(d in 1usize..16, seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = random(&mut rng, d, d);
        let w = compose_weight(Variant::FactorizedUv, Some(&Tensor::eye(d)), &ComposerMatrix::from_v(v.clone())).unwrap();
        prop_assert_eq!(w.data(), v.data());
    }

    #[test]
    fn standardization_is_idempotent(rows in 1usize..8, cols in 2usize..16, seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random(&mut rng, rows, cols);
        let once = weight_standardize(&w).unwrap();
        let twice = weight_standardize(&once).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn changing_v_moves_layer_two_inside_col_u(seed in 0u64..10_000) {
        let cfg = mlp(12, 4, false);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shared = SharedParams::<f64>::init(&cfg, seed).unwrap();
        let a = ComposerMatrix::random(&cfg, &mut rng).unwrap();
        let b = ComposerMatrix::random(&cfg, &mut rng).unwrap();
        let coords = coords(&mut rng, 9);
        let gamma = shared.fourier.encode(&coords).unwrap();
        let pa = to_matrix(&pre_activation(&shared, &a, &gamma, 2).unwrap());
        let pb = to_matrix(&pre_activation(&shared, &b, &gamma, 2).unwrap());
        // rows are coordinates, so the change lives in the column space of U
        // once transposed to `d x M`
        let delta = (pb - pa).transpose();
        let q = to_matrix(shared.composer_u().unwrap()).qr().q();
        let residual = &delta - &q * (q.transpose() * &delta);
        prop_assert!(delta.norm() > 1e-6);
        prop_assert!(residual.norm() < 1e-8 * delta.norm().max(1.0), "residual {:e}", residual.norm());
    }
}

#[test]
fn only_the_composer_differs_between_instances() {
    let cfg = mlp(12, 4, true);
    let shared = SharedParams::<f64>::init(&cfg, 3).unwrap();
    let before: Vec<Vec<f64>> = shared.tensors().iter().map(|t| t.to_vec()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let coords = coords(&mut rng, 5);
    let gamma = shared.fourier.encode(&coords).unwrap();
    let a = ComposerMatrix::random(&cfg, &mut rng).unwrap();
    let b = ComposerMatrix::random(&cfg, &mut rng).unwrap();
    let la = pre_activation(&shared, &a, &gamma, 4).unwrap();
    let lb = pre_activation(&shared, &b, &gamma, 4).unwrap();
    assert_ne!(la.data(), lb.data());
    let after: Vec<Vec<f64>> = shared.tensors().iter().map(|t| t.to_vec()).collect();
    assert_eq!(before, after);
}
