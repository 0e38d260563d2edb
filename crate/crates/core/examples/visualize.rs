//! Trains briefly, then writes layer activation maps for one instance and
//! side-by-side reconstructions for a few test instances.
//!
//! ```text
//! cargo run --release --example visualize -- [steps] [out dir]
//! ```

use std::path::PathBuf;

use composer_inr::config::ExperimentConfig;
use composer_inr::data::Dataset;
use composer_inr::train::{train, TrainOptions};
use composer_inr::viz::{viz_activations, viz_reconstruction};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mut cfg = ExperimentConfig::desk_gratings();
    cfg.steps = args.next().map(|s| s.parse()).transpose()?.unwrap_or(300);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "viz".into()));

    let dataset = Dataset::build(&cfg.dataset)?;
    let (model, _) = train::<f32>(&cfg, &dataset, &TrainOptions::default())?;

    let first = dataset.test[0];
    let maps = viz_activations(&model, &dataset.eval_view(first)?, 4, &out.join("activations"))?;
    println!(
        "{} neuron maps, montage at {}",
        maps.neurons.len(),
        maps.montage.display()
    );

    for f in viz_reconstruction(&model, &dataset, &dataset.test[..4], &out.join("reconstructions"))? {
        println!("instance {:3}  {:.2} dB  {}", f.index, f.psnr, f.path.display());
    }
    Ok(())
}
