//! Sweeps over the modulation variant or the modulated layer.
//!
//! Every arm trains from the same seed on the same dataset for the same
//! number of steps. A failing arm is recorded and the sweep continues.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use composer_autodiff::Scalar;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Variant};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::train::{evaluate, train, TrainOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Variant,
    ModulatedLayer,
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "variant" => Ok(Axis::Variant),
            "layer" | "modulated_layer" => Ok(Axis::ModulatedLayer),
            _ => Err(Error::Config(format!(
                "unknown ablation axis {s:?}; use variant or modulated_layer"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ArmStatus {
    Completed { test_psnr: f64, final_loss: f64 },
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub label: String,
    pub config: ExperimentConfig,
    pub status: ArmStatus,
    pub seconds: f64,
    /// Final checkpoint, when the sweep was given an output directory.
    pub checkpoint: Option<PathBuf>,
}

impl ArmResult {
    pub fn test_psnr(&self) -> Option<f64> {
        match self.status {
            ArmStatus::Completed { test_psnr, .. } => Some(test_psnr),
            ArmStatus::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub axis: Axis,
    pub dataset: String,
    pub steps: usize,
    /// Arms in sweep order.
    pub arms: Vec<ArmResult>,
}

impl AblationReport {
    pub fn arm(&self, label: &str) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.label == label)
    }

    pub fn psnr(&self, label: &str) -> Option<f64> {
        self.arm(label).and_then(ArmResult::test_psnr)
    }

    /// Completed arms by descending test PSNR, then failed arms in sweep order.
    pub fn ranked(&self) -> Vec<&ArmResult> {
        let mut done: Vec<&ArmResult> = self.arms.iter().filter(|a| a.test_psnr().is_some()).collect();
        done.sort_by(|a, b| b.test_psnr().partial_cmp(&a.test_psnr()).expect("finite PSNR"));
        done.extend(self.arms.iter().filter(|a| a.test_psnr().is_none()));
        done
    }

    pub fn to_table(&self) -> String {
        let header = match self.axis {
            Axis::Variant => "modulation",
            Axis::ModulatedLayer => "modulated layer",
        };
        let width = self
            .arms
            .iter()
            .map(|a| a.label.len())
            .max()
            .unwrap_or(0)
            .max(header.len());
        let mut out = String::new();
        let _ = writeln!(out, "rank  {header:<width$}  test PSNR (dB)  time (s)");
        for (i, arm) in self.ranked().into_iter().enumerate() {
            let score = match &arm.status {
                ArmStatus::Completed { test_psnr, .. } => format!("{test_psnr:14.2}"),
                ArmStatus::Failed { .. } => format!("{:>14}", "failed"),
            };
            let _ = writeln!(out, "{:>4}  {:<width$}  {score}  {:8.1}", i + 1, arm.label, arm.seconds);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,status,test_psnr,final_loss,seconds\n");
        for arm in &self.arms {
            let (status, psnr, loss) = match &arm.status {
                ArmStatus::Completed { test_psnr, final_loss } => {
                    ("completed", format!("{test_psnr}"), format!("{final_loss}"))
                }
                ArmStatus::Failed { .. } => ("failed", String::new(), String::new()),
            };
            let _ = writeln!(out, "{},{status},{psnr},{loss},{}", arm.label, arm.seconds);
        }
        out
    }

    /// Writes `ablation-<axis>.{json,csv,txt}` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let stem = match self.axis {
            Axis::Variant => "ablation-variant",
            Axis::ModulatedLayer => "ablation-modulated_layer",
        };
        let json = serde_json::to_string_pretty(self).expect("report serialises");
        for (ext, body) in [("json", json), ("csv", self.to_csv()), ("txt", self.to_table())] {
            let path = dir.join(format!("{stem}.{ext}"));
            std::fs::write(&path, body).map_err(Error::io(&path))?;
        }
        Ok(())
    }
}

/// `(label, config)` for every arm of `axis`, derived from `base`.
pub fn arm_configs(base: &ExperimentConfig, axis: Axis) -> Vec<(String, ExperimentConfig)> {
    match axis {
        Axis::Variant => Variant::ALL
            .iter()
            .map(|&v| {
                let mut cfg = base.clone();
                cfg.model.variant = v;
                (v.name().to_string(), cfg)
            })
            .collect(),
        Axis::ModulatedLayer => (1..=base.model.layers)
            .map(|l| {
                let mut cfg = base.clone();
                cfg.model.modulated_layer = l;
                (format!("layer {l}"), cfg)
            })
            .collect(),
    }
}

pub type ArmProgress<'a> = &'a (dyn Fn(&str, usize, f64) + Sync);

/// Trains one arm and scores it on the test split.
pub fn run_arm<T: Scalar>(
    label: &str,
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    out_dir: Option<&Path>,
    progress: Option<ArmProgress>,
) -> ArmResult {
    let start = Instant::now();
    let step_cb = |step: usize, loss: f64| {
        if let Some(f) = progress {
            f(label, step, loss);
        }
    };
    let arm_dir = out_dir.map(|d| d.join(format!("arm-{}", label.replace(' ', "-"))));
    let opts = TrainOptions {
        out_dir: arm_dir.clone(),
        progress: Some(&step_cb),
    };
    let outcome = (|| -> Result<(f64, f64, Option<PathBuf>)> {
        cfg.validate()?;
        let (model, log) = train::<T>(cfg, dataset, &opts)?;
        let report = evaluate(&model, dataset, Split::Test)?;
        let checkpoint = match &arm_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
                let path = dir.join("final.cinr");
                model.save(&path)?;
                Some(path)
            }
            None => None,
        };
        Ok((
            report.mean_psnr,
            log.losses.last().copied().unwrap_or(f64::NAN),
            checkpoint,
        ))
    })();
    let (status, checkpoint) = match outcome {
        Ok((test_psnr, final_loss, ck)) => (ArmStatus::Completed { test_psnr, final_loss }, ck),
        Err(e) => (ArmStatus::Failed { reason: e.to_string() }, None),
    };
    ArmResult {
        label: label.to_string(),
        config: cfg.clone(),
        status,
        seconds: start.elapsed().as_secs_f64(),
        checkpoint,
    }
}

/// One training run per arm of `axis`.
///
/// Arms whose config equals one in `reuse` take that result instead of
/// retraining.
pub fn run_ablation<T: Scalar>(
    base: &ExperimentConfig,
    dataset: &Dataset,
    axis: Axis,
    out_dir: Option<&Path>,
    progress: Option<ArmProgress>,
    reuse: &[ArmResult],
) -> Result<AblationReport> {
    base.validate()?;
    if dataset.test.is_empty() {
        return Err(Error::Data("ablation needs a non-empty test split".into()));
    }
    let arms = arm_configs(base, axis)
        .into_iter()
        .map(|(label, cfg)| match reuse.iter().find(|r| r.config == cfg) {
            Some(prev) => ArmResult { label, ..prev.clone() },
            None => run_arm::<T>(&label, &cfg, dataset, out_dir, progress),
        })
        .collect();
    let report = AblationReport {
        axis,
        dataset: dataset.hash(),
        steps: base.steps,
        arms,
    };
    if let Some(dir) = out_dir {
        report.write(dir)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::desk_gratings();
        cfg.model.hidden = 8;
        cfg.model.rank = 8;
        cfg.model.fourier.d_f = 8;
        cfg.dataset.count = 6;
        cfg.dataset.train = 4;
        cfg.dataset.resolution = 8;
        cfg.steps = 2;
        cfg.batch_size = 2;
        cfg
    }

    #[test]
    fn arm_lists_follow_the_axis() {
        let cfg = tiny();
        let labels: Vec<String> = arm_configs(&cfg, Axis::Variant).into_iter().map(|a| a.0).collect();
        assert_eq!(labels, ["direct_v", "both_factors", "hadamard", "factorized_uv"]);
        let layers = arm_configs(&cfg, Axis::ModulatedLayer);
        assert_eq!(layers.len(), 5);
        assert_eq!(layers[4].1.model.modulated_layer, 5);
    }

    #[test]
    fn failed_arm_does_not_stop_the_sweep() {
        let mut cfg = tiny();
        cfg.model.rank = 4;
        let ds = Dataset::build(&cfg.dataset).unwrap();
        let report = run_ablation::<f32>(&cfg, &ds, Axis::Variant, None, None, &[]).unwrap();
        assert!(report.psnr("direct_v").is_none());
        assert!(report.psnr("hadamard").is_none());
        assert!(report.psnr("factorized_uv").is_some());
        assert!(report.psnr("both_factors").is_some());
        let ranked = report.ranked();
        assert!(ranked[0].test_psnr().is_some() && ranked[3].test_psnr().is_none());
        assert!(report.to_table().contains("failed"));
    }

    #[test]
    fn reused_arms_are_not_retrained() {
        let cfg = tiny();
        let ds = Dataset::build(&cfg.dataset).unwrap();
        let first = run_ablation::<f32>(&cfg, &ds, Axis::Variant, None, None, &[]).unwrap();
        let calls = std::sync::atomic::AtomicUsize::new(0);
        let count = |_: &str, _: usize, _: f64| {
            calls.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        };
        let layers = run_ablation::<f32>(&cfg, &ds, Axis::ModulatedLayer, None, Some(&count), &first.arms).unwrap();
        assert_eq!(calls.into_inner(), 4 * cfg.steps);
        assert_eq!(layers.psnr("layer 2"), first.psnr("factorized_uv"));
    }
}
