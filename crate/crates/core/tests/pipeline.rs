//! Training, evaluation, test-time optimization and meta-learning on small
//! grating runs.

use composer_inr::bundle::{Model, PredictorState};
use composer_inr::config::{ExperimentConfig, MetaConfig, Predictor, Variant};
use composer_inr::data::{Dataset, Split};
use composer_inr::model::compose_weight;
use composer_inr::params::Params;
use composer_inr::train::{evaluate, train, tto, TrainOptions, TtoConfig, TtoScope};
use nalgebra::DMatrix;

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk_gratings();
    cfg.model.hidden = 24;
    cfg.model.rank = 6;
    cfg.model.fourier.d_f = 16;
    cfg.dataset.count = 24;
    cfg.dataset.train = 16;
    cfg.dataset.resolution = 16;
    cfg.steps = 20;
    cfg.batch_size = 4;
    cfg
}

fn ema(xs: &[f64], window: usize) -> Vec<f64> {
    let alpha = 2.0 / (window as f64 + 1.0);
    let mut out = Vec::with_capacity(xs.len());
    let mut acc = xs[0];
    for &x in xs {
        acc = alpha * x + (1.0 - alpha) * acc;
        out.push(acc);
    }
    out
}

#[test]
fn loss_trend_falls_over_the_first_200_steps() {
    let mut cfg = ExperimentConfig::desk_gratings();
    cfg.steps = 200;
    let ds = Dataset::build(&cfg.dataset).unwrap();
    let (_, log) = train::<f32>(&cfg, &ds, &TrainOptions::default()).unwrap();
    let smooth = ema(&log.losses, 50);
    assert!(
        smooth[199] < smooth[49],
        "EMA {} at step 50, {} at step 200",
        smooth[49],
        smooth[199]
    );
    assert!(smooth[49] < smooth[0]);
}

#[test]
fn evaluation_is_pure() {
    let cfg = small();
    let ds = Dataset::build(&cfg.dataset).unwrap();
    let (model, _) = train::<f32>(&cfg, &ds, &TrainOptions::default()).unwrap();
    let a = evaluate(&model, &ds, Split::Test).unwrap();
    let b = evaluate(&model, &ds, Split::Test).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.instances.len(), 8);
    assert_eq!(a.checkpoint, model.id());
}

#[test]
fn all_weights_tto_reaches_at_most_the_composer_only_loss() {
    let cfg = small();
    let ds = Dataset::build(&cfg.dataset).unwrap();
    let (model, _) = train::<f64>(&cfg, &ds, &TrainOptions::default()).unwrap();
    for &i in &ds.test[..3] {
        let signal = ds.eval_view(i).unwrap();
        let run = |scope| {
            let cfg = TtoConfig {
                steps: 30,
                scope,
                ..TtoConfig::default()
            };
            tto(&model, &signal, &cfg).unwrap().report
        };
        let (v, all) = (run(TtoScope::ComposerOnly), run(TtoScope::AllWeights));
        assert_eq!(v.before_psnr, all.before_psnr);
        assert!(
            all.losses.last() <= v.losses.last(),
            "instance {i}: {:?} vs {:?}",
            all.losses.last(),
            v.losses.last()
        );
        println!(
            "instance {i}: composer-only {:+.2} dB, all weights {:+.2} dB",
            v.after_psnr - v.before_psnr,
            all.after_psnr - all.before_psnr
        );
    }
}

#[test]
fn composer_only_tto_leaves_shared_weights_alone() {
    let cfg = small();
    let ds = Dataset::build(&cfg.dataset).unwrap();
    let model = Model::<f32>::init(&cfg, &[16, 16], 1).unwrap();
    let out = tto(
        &model,
        &ds.instances[ds.test[0]],
        &TtoConfig {
            steps: 5,
            ..TtoConfig::default()
        },
    )
    .unwrap();
    assert_eq!(
        out.shared.tensors().iter().map(|t| t.to_vec()).collect::<Vec<_>>(),
        model.shared.tensors().iter().map(|t| t.to_vec()).collect::<Vec<_>>()
    );
}

#[test]
fn cavia_adaptation_keeps_shared_weights_bit_identical() {
    let mut cfg = small();
    cfg.predictor = Predictor::Meta(MetaConfig::default());
    let ds = Dataset::build(&cfg.dataset).unwrap();
    let (model, _) = train::<f64>(&cfg, &ds, &TrainOptions::default()).unwrap();
    let gamma = model.grid_features().unwrap();
    let (shared, composer) = model.instance_params(&ds.instances[ds.test[0]], &gamma).unwrap();
    let bits = |m: &composer_inr::model::SharedParams<f64>| -> Vec<u64> {
        m.tensors()
            .iter()
            .flat_map(|t| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>())
            .collect()
    };
    assert_eq!(bits(&shared), bits(&model.shared));
    let PredictorState::Meta(init) = &model.predictor else {
        unreachable!()
    };
    assert_ne!(composer.v.data(), init.v.data());
}

#[test]
fn trained_checkpoints_keep_the_rank_bound() {
    let cfg = small();
    assert_eq!(cfg.model.variant, Variant::FactorizedUv);
    let ds = Dataset::build(&cfg.dataset).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (model, _) = train::<f64>(&cfg, &ds, &TrainOptions::default()).unwrap();
    let path = dir.path().join("m.cinr");
    model.save(&path).unwrap();
    let back = Model::<f32>::load(&path).unwrap();
    let gamma = back.grid_features().unwrap();
    for &i in &ds.test {
        let (shared, composer) = back.instance_params(&ds.instances[i], &gamma).unwrap();
        let w = compose_weight(cfg.model.variant, shared.composer_u(), &composer).unwrap();
        let (r, c) = w.dims2().unwrap();
        let m = DMatrix::from_row_slice(r, c, &w.to_f64_vec());
        let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let tol = sv[0] * 1e-5;
        assert!(sv[cfg.model.rank..].iter().all(|&s| s < tol), "{sv:?}");
    }
}
