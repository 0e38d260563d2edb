//! Saves a trained model, loads it back at both precisions and checks that
//! the reconstructions agree.
//!
//! ```text
//! cargo run --release --example checkpoint -- [path]
//! ```

use composer_inr::bundle::Model;
use composer_inr::checkpoint::Checkpoint;
use composer_inr::config::ExperimentConfig;
use composer_inr::data::Dataset;
use composer_inr::train::{train, TrainOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "model.cinr".into());
    let mut cfg = ExperimentConfig::desk_gratings();
    cfg.steps = 20;
    let dataset = Dataset::build(&cfg.dataset)?;
    let (model, _) = train::<f32>(&cfg, &dataset, &TrainOptions::default())?;
    model.save(path.as_ref())?;

    let ck = Checkpoint::load(path.as_ref())?;
    println!("{path}: {} tensors, id {}", ck.tensors.len(), ck.id());
    for t in ck.tensors.iter().take(5) {
        println!("  {:24} {:?}", t.name, t.shape);
    }

    let same = Model::<f32>::load(path.as_ref())?;
    let wide = Model::<f64>::load(path.as_ref())?;
    let signal = &dataset.instances[dataset.test[0]];
    let a = model.reconstruct(signal, &model.grid_features()?)?;
    let b = same.reconstruct(signal, &same.grid_features()?)?;
    let c = wide.reconstruct(signal, &wide.grid_features()?)?;
    let gap = a.iter().zip(&c).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    println!("f32 reload identical: {}", a == b);
    println!("f64 reload max difference: {gap:.2e}");
    Ok(())
}
