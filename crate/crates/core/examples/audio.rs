//! Generalizable INR on short synthetic tones: 1-D coordinates, audio
//! tokenizer, and a WAV of one reconstruction.
//!
//! ```text
//! cargo run --release --example audio -- [steps] [out.wav]
//! ```

use composer_inr::config::{
    DatasetKind, DatasetSpec, ExperimentConfig, FourierConfig, HypernetConfig, Predictor, TokenizerConfig,
    TransformerConfig,
};
use composer_inr::data::wav::{save_wav, Wav};
use composer_inr::data::{Dataset, Signal, Split};
use composer_inr::train::{evaluate, train, TrainOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mut cfg = ExperimentConfig::desk_gratings();
    cfg.name = "desk-tones".into();
    cfg.steps = args.next().map(|s| s.parse()).transpose()?.unwrap_or(300);
    let out = args.next().unwrap_or_else(|| "tone.wav".into());
    cfg.model.fourier = FourierConfig {
        d_f: 128,
        sigma: 10.0,
        ..FourierConfig::audio()
    };
    cfg.predictor = Predictor::Hypernet(HypernetConfig {
        transformer: TransformerConfig::desk(),
        tokenizer: TokenizerConfig::Audio { patch: 20 },
    });
    cfg.dataset = DatasetSpec {
        kind: DatasetKind::SyntheticTones,
        path: None,
        count: 256,
        train: 224,
        resolution: 800,
        sample_rate: 16_000,
        seed: 0,
    };

    let dataset = Dataset::build(&cfg.dataset)?;
    let progress = |step: usize, loss: f64| {
        if step.is_multiple_of(50) {
            println!("step {step:4}  loss {loss:.5}");
        }
    };
    let opts = TrainOptions {
        out_dir: None,
        progress: Some(&progress),
    };
    let (model, _) = train::<f32>(&cfg, &dataset, &opts)?;
    let report = evaluate(&model, &dataset, Split::Test)?;
    println!(
        "mean test PSNR {:.2} dB over {} clips",
        report.mean_psnr,
        report.instances.len()
    );

    let signal = &dataset.instances[dataset.test[0]];
    let rec = model.reconstruct(signal, &model.grid_features()?)?;
    let clip = Signal::new(vec![rec.len()], 1, rec)?;
    save_wav(out.as_ref(), &Wav::from_signal(&clip, cfg.dataset.sample_rate)?)?;
    println!("wrote {out}");
    Ok(())
}
