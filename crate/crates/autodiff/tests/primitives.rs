use composer_autodiff::nn::{layer_norm, mse, scaled_dot_attention};
use composer_autodiff::{AdError, GradMode, Graph, Tensor};
use proptest::prelude::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(shape, data.to_vec()).unwrap()
}

#[test]
fn matmul_identity_and_hand_arithmetic() {
    let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(Tensor::eye(2).matmul(&m).unwrap().data(), m.data());
    let out = t(&[1, 2], &[1.0, 2.0]).matmul(&t(&[2, 1], &[3.0, 4.0])).unwrap();
    assert_eq!(out.shape(), &[1, 1]);
    assert_eq!(out.data(), &[11.0]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let err = t(&[2, 3], &[0.0; 6]).matmul(&t(&[2, 3], &[0.0; 6])).unwrap_err();
    match &err {
        AdError::Dimension { lhs, rhs, .. } => {
            assert_eq!(lhs, &[2, 3]);
            assert_eq!(rhs, &[2, 3]);
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(err.to_string().contains("[2, 3]"));
}

#[test]
fn relu_and_sin_values() {
    assert_eq!(t(&[3], &[-1.0, 0.0, 2.0]).relu().unwrap().data(), &[0.0, 0.0, 2.0]);
    assert_eq!(t(&[1], &[0.0]).sin().unwrap().data(), &[0.0]);
}

#[test]
fn relu_gradient_is_sign_mask() {
    let g = Graph::new();
    let x = g.leaf(&t(&[2], &[-1.0, 2.0]));
    let loss = x.relu().unwrap().sum_all().unwrap();
    let dx = g.grad(&loss, &[&x], GradMode::Detached).unwrap();
    assert_eq!(dx[0].data(), &[0.0, 1.0]);

    let g = Graph::new();
    let x = g.leaf(&t(&[1], &[0.0]));
    let loss = x.relu().unwrap().sum_all().unwrap();
    assert_eq!(g.grad(&loss, &[&x], GradMode::Detached).unwrap()[0].data(), &[0.0]);
}

#[test]
fn unsupported_broadcast_is_a_dimension_error() {
    let err = t(&[2, 3], &[0.0; 6]).add(&t(&[3, 2], &[0.0; 6])).unwrap_err();
    assert!(matches!(err, AdError::Dimension { .. }));
    let err = t(&[2, 3], &[0.0; 6]).mul(&t(&[2], &[0.0; 2])).unwrap_err();
    assert!(matches!(err, AdError::Dimension { .. }));
}

#[test]
fn mse_conventions() {
    let p = t(&[2, 2], &[0.3, -0.1, 0.5, 0.9]);
    assert_eq!(mse(&p, &p).unwrap().item().unwrap(), 0.0);
    let one = mse(&t(&[1, 2], &[1.0, 0.0]), &t(&[1, 2], &[0.0, 0.0])).unwrap();
    assert_eq!(one.item().unwrap(), 1.0);
    assert!(mse(&t(&[0, 2], &[]), &t(&[0, 2], &[])).is_err());
    assert!(mse(&t(&[1, 2], &[0.0; 2]), &t(&[2, 1], &[0.0; 2])).is_err());
}

/// Scalar-loop oracle: (1/M) sum_i sum_c (y - yhat)^2.
#[test]
fn mse_matches_scalar_loop() {
    let pred: Vec<f64> = (0..15).map(|i| ((i * 7919) % 31) as f64 / 17.0 - 0.8).collect();
    let target: Vec<f64> = (0..15).map(|i| ((i * 104729) % 23) as f64 / 11.0 - 1.0).collect();
    let mut acc = 0.0;
    for row in 0..5 {
        let mut sq = 0.0;
        for c in 0..3 {
            let d = target[row * 3 + c] - pred[row * 3 + c];
            sq += d * d;
        }
        acc += sq;
    }
    let expected = acc / 5.0;
    let got = mse(&t(&[5, 3], &pred), &t(&[5, 3], &target)).unwrap().item().unwrap();
    assert!((got - expected).abs() <= 1e-15 * expected.abs().max(1.0));
}

#[test]
fn backward_basics() {
    let g = Graph::new();
    let x = g.leaf(&t(&[3], &[0.2, -4.0, 9.0]));
    let loss = x.sum_all().unwrap();
    assert_eq!(
        g.grad(&loss, &[&x], GradMode::Detached).unwrap()[0].data(),
        &[1.0, 1.0, 1.0]
    );

    let unrelated = g.leaf(&t(&[2], &[1.0, 2.0]));
    let gu = g.grad(&loss, &[&unrelated], GradMode::Detached).unwrap();
    assert_eq!(gu[0].data(), &[0.0, 0.0]);

    let err = g.grad(&x, &[&x], GradMode::Detached).unwrap_err();
    assert!(matches!(err, AdError::NonScalarLoss(_)));
}

#[test]
fn mixing_graphs_is_rejected() {
    let a = Graph::new();
    let b = Graph::new();
    let x = a.leaf(&t(&[1], &[1.0]));
    let y = b.leaf(&t(&[1], &[1.0]));
    assert!(matches!(x.add(&y), Err(AdError::GraphMismatch)));
}

#[test]
fn softmax_layer_norm_attention_examples() {
    assert_eq!(t(&[1, 2], &[0.0, 0.0]).softmax_rows().unwrap().data(), &[0.5, 0.5]);
    let big = t(&[1, 2], &[1000.0, 1000.0]).softmax_rows().unwrap();
    assert_eq!(big.data(), &[0.5, 0.5]);

    let ln = layer_norm(&t(&[1, 4], &[3.0; 4]), &Tensor::ones(&[4]), &Tensor::zeros(&[4]), 1e-5).unwrap();
    assert!(ln.data().iter().all(|&v| v == 0.0));

    let q = t(&[2, 3], &[0.1, 0.2, 0.3, -1.0, 0.5, 2.0]);
    let k = t(&[1, 3], &[0.7, -0.2, 0.4]);
    let v = t(&[1, 2], &[5.0, -6.0]);
    let out = scaled_dot_attention(&q, &k, &v).unwrap();
    assert_eq!(out.data(), &[5.0, -6.0, 5.0, -6.0]);

    assert!(t(&[1, 0], &[]).softmax_rows().is_err());
    assert!(scaled_dot_attention(&q, &t(&[1, 2], &[0.0; 2]), &v).is_err());
}

#[test]
fn graph_tracks_retained_bytes() {
    let g = Graph::<f32>::new();
    let x = g.leaf(&Tensor::zeros(&[4, 4]));
    let before = g.bytes_retained();
    let _y = x.add(&x).unwrap();
    assert_eq!(g.bytes_retained() - before, 16 * 4);
}

proptest! {
    #[test]
    fn shape_invariant_holds(r in 1usize..6, c in 1usize..6, k in 1usize..6) {
        let a = Tensor::<f64>::ones(&[r, c]);
        let b = Tensor::<f64>::ones(&[c, k]);
        let out = a.matmul(&b).unwrap();
        prop_assert_eq!(out.shape().iter().product::<usize>(), out.data().len());
        prop_assert!(out.data().iter().all(|&v| v == c as f64));
        let tr = out.transpose().unwrap().transpose().unwrap();
        prop_assert_eq!(tr.data(), out.data());
    }

    #[test]
    fn softmax_rows_sum_to_one(vals in proptest::collection::vec(-50.0f64..50.0, 1..24)) {
        let n = vals.len();
        let s = Tensor::from_vec(&[1, n], vals).unwrap().softmax_rows().unwrap();
        let total: f64 = s.data().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }
}
