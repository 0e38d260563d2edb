//! Fits one grating with a plain modulated MLP (no hypernetwork) and writes
//! the reconstruction next to the target.
//!
//! ```text
//! cargo run --release --example fit_single_instance -- [steps] [out.png]
//! ```

use composer_inr::config::ExperimentConfig;
use composer_inr::data::image::{save_png, Image8};
use composer_inr::data::{gratings, grid, Signal};
use composer_inr::metrics::psnr;
use composer_inr::model::forward_features;
use composer_inr::train::fit_single_instance;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(300);
    let out = args.next().unwrap_or_else(|| "fit.png".into());

    let cfg = ExperimentConfig::desk_gratings();
    let (signal, params) = gratings(1, 32, 7).remove(0);
    println!("grating {params}");
    let fit = fit_single_instance::<f32>(&cfg.model, &signal, steps, 1e-3, 0)?;
    println!(
        "psnr {:.2} dB -> {:.2} dB after {steps} steps",
        fit.report.before_psnr, fit.report.after_psnr
    );

    let gamma = fit.shared.fourier.encode(&grid(&signal.dims)?)?;
    let pred = forward_features(&fit.shared, &fit.composer, &gamma, false)?
        .output
        .to_f64_vec();
    println!("check: {:.2} dB", psnr(&pred, &signal.data)?);
    let side_by_side: Vec<f64> = signal
        .data
        .chunks(32)
        .zip(pred.chunks(32))
        .flat_map(|(a, b)| a.iter().chain(b).copied())
        .collect();
    save_png(
        out.as_ref(),
        &Image8::from_signal(&Signal::new(vec![32, 64], 1, side_by_side)?)?,
    )?;
    println!("wrote {out}");
    Ok(())
}
