//! Refines predicted composers on held-out gratings, once with only the
//! composer free and once with every MLP weight free.
//!
//! ```text
//! cargo run --release --example test_time_optimization -- [model.cinr] [tto steps]
//! ```
//!
//! Without a checkpoint a short training run is done first.

use composer_inr::bundle::Model;
use composer_inr::config::ExperimentConfig;
use composer_inr::data::{Dataset, Split};
use composer_inr::metrics::mean;
use composer_inr::train::{train, tto, TrainOptions, TtoConfig, TtoScope};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let model = match args.next() {
        Some(path) => Model::<f32>::load(path.as_ref())?,
        None => {
            let mut cfg = ExperimentConfig::desk_gratings();
            cfg.steps = 300;
            println!("training for {} steps", cfg.steps);
            train::<f32>(&cfg, &Dataset::build(&cfg.dataset)?, &TrainOptions::default())?.0
        }
    };
    let steps: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(100);
    let dataset = Dataset::build(&model.config.dataset)?;
    let held_out: Vec<usize> = dataset.split(Split::Test).iter().copied().take(8).collect();

    for scope in [TtoScope::ComposerOnly, TtoScope::AllWeights] {
        let cfg = TtoConfig {
            steps,
            scope,
            ..TtoConfig::default()
        };
        let mut before = Vec::new();
        let mut after = Vec::new();
        for &i in &held_out {
            let report = tto(&model, &dataset.eval_view(i)?, &cfg)?.report;
            before.push(report.before_psnr);
            after.push(report.after_psnr);
        }
        let (b, a) = (mean(before), mean(after));
        println!("{scope:?}: {b:.2} dB -> {a:.2} dB ({:+.2} dB)", a - b);
    }
    Ok(())
}
