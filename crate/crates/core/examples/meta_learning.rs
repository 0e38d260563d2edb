//! Meta-learns a shared composer initialization on gratings, then compares
//! adapted test PSNR against adapting from the untrained model.
//!
//! ```text
//! cargo run --release --example meta_learning -- [steps]
//! ```

use composer_inr::bundle::Model;
use composer_inr::config::ExperimentConfig;
use composer_inr::data::{Dataset, Split};
use composer_inr::train::{evaluate, train, TrainOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ExperimentConfig::desk_meta_gratings();
    if let Some(steps) = std::env::args().nth(1) {
        cfg.steps = steps.parse()?;
    }
    let dataset = Dataset::build(&cfg.dataset)?;
    let (dims, channels) = dataset.geometry();
    let untrained = Model::<f32>::init(&cfg, &dims, channels)?;
    let before = evaluate(&untrained, &dataset, Split::Test)?;

    let progress = |step: usize, loss: f64| {
        if step.is_multiple_of(50) {
            println!("outer step {step:4}  loss {loss:.5}");
        }
    };
    let opts = TrainOptions {
        out_dir: None,
        progress: Some(&progress),
    };
    let (model, _) = train::<f32>(&cfg, &dataset, &opts)?;
    let after = evaluate(&model, &dataset, Split::Test)?;
    let inner = model.meta_config().map(|m| m.inner_steps).unwrap_or(0);
    println!("adapted test PSNR after {inner} inner steps:");
    println!("  untrained init  {:.2} dB", before.mean_psnr);
    println!("  meta-learned    {:.2} dB", after.mean_psnr);
    Ok(())
}
