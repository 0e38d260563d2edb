//! Equal-budget sweep over the modulation variant or the modulated layer.
//!
//! ```text
//! cargo run --release --example ablation -- [variant|layer] [steps] [out dir]
//! ```

use std::time::Instant;

use composer_inr::ablation::{run_ablation, Axis};
use composer_inr::config::ExperimentConfig;
use composer_inr::data::Dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let axis: Axis = args.next().as_deref().unwrap_or("variant").parse()?;
    let mut base = ExperimentConfig::desk_gratings();
    base.steps = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);
    let out = args.next();

    let dataset = Dataset::build(&base.dataset)?;
    let start = Instant::now();
    let progress = |label: &str, step: usize, loss: f64| {
        if (step + 1).is_multiple_of(100) {
            println!(
                "[{label}] step {} loss {loss:.5} ({:.0}s)",
                step + 1,
                start.elapsed().as_secs_f64()
            );
        }
    };
    let report = run_ablation::<f32>(
        &base,
        &dataset,
        axis,
        out.as_deref().map(AsRef::as_ref),
        Some(&progress),
        &[],
    )?;
    print!("{}", report.to_table());
    Ok(())
}
