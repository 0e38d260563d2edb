//! Trains the transformer hypernetwork on synthetic gratings and reports test PSNR.
//!
//! ```text
//! cargo run --release --example train_gratings -- [steps] [variant]
//! ```

use std::time::Instant;

use composer_inr::config::{ExperimentConfig, Variant};
use composer_inr::data::{Dataset, Split};
use composer_inr::train::{evaluate, train, TrainOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mut cfg = ExperimentConfig::desk_gratings();
    if let Some(steps) = args.next() {
        cfg.steps = steps.parse()?;
    }
    if let Some(v) = args.next() {
        cfg.model.variant = serde_json::from_value(serde_json::Value::String(v))?;
    }
    if cfg.model.variant != Variant::FactorizedUv {
        println!("variant: {}", cfg.model.variant.name());
    }
    let dataset = Dataset::build(&cfg.dataset)?;
    let start = Instant::now();
    let progress = |step: usize, loss: f64| {
        if step.is_multiple_of(50) {
            println!("step {step:5}  loss {loss:.5}  {:.1}s", start.elapsed().as_secs_f64());
        }
    };
    let opts = TrainOptions {
        out_dir: None,
        progress: Some(&progress),
    };
    let (model, _) = train::<f32>(&cfg, &dataset, &opts)?;
    let report = evaluate(&model, &dataset, Split::Test)?;
    println!(
        "{} steps in {:.1}s, mean test PSNR {:.2} dB over {} instances",
        cfg.steps,
        start.elapsed().as_secs_f64(),
        report.mean_psnr,
        report.instances.len()
    );
    Ok(())
}
