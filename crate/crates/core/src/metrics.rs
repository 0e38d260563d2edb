//! PSNR and evaluation reports.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reported PSNR when the reconstruction error is zero.
pub const PSNR_CAP: f64 = 99.0;

/// Peak signal value for every modality.
pub const PEAK: f64 = 1.0;

pub const PSNR_DEFINITION: &str = "psnr = 10*log10(peak^2 / mse), peak = 1, mse averaged over coordinates and output channels, capped at 99 dB; the training loss instead sums squared error over channels";

/// Mean squared error over every element (coordinates and channels).
pub fn metric_mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Data(format!(
            "cannot compare {} predicted values with {} targets",
            pred.len(),
            target.len()
        )));
    }
    Ok(pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.len() as f64)
}

/// `10 log10(peak² / mse)`, capped at [`PSNR_CAP`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse.is_nan() {
        return f64::NAN;
    }
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (PEAK * PEAK / mse).log10()).min(PSNR_CAP)
}

pub fn psnr(pred: &[f64], target: &[f64]) -> Result<f64> {
    Ok(psnr_from_mse(metric_mse(pred, target)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceScore {
    pub index: usize,
    pub name: String,
    pub mse: f64,
    pub psnr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsnrReport {
    pub dataset: String,
    pub checkpoint: String,
    pub split: String,
    pub definition: String,
    pub mean_psnr: f64,
    pub instances: Vec<InstanceScore>,
}

impl PsnrReport {
    pub fn new(dataset: String, checkpoint: String, split: String, instances: Vec<InstanceScore>) -> Self {
        let mean_psnr = mean(instances.iter().map(|s| s.psnr));
        Self {
            dataset,
            checkpoint,
            split,
            definition: PSNR_DEFINITION.into(),
            mean_psnr,
            instances,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,name,mse,psnr\n");
        for s in &self.instances {
            out.push_str(&format!("{},{},{:e},{}\n", s.index, s.name, s.mse, s.psnr));
        }
        out
    }

    /// Writes `{stem}.csv` and `{stem}.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(Error::io(&csv))?;
        let json = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(self).expect("report serialises");
        std::fs::write(&json, text).map_err(Error::io(&json))
    }
}

pub fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_formula_and_cap() {
        assert!((psnr_from_mse(1e-2) - 20.0).abs() < 1e-12);
        assert_eq!(psnr_from_mse(0.0), PSNR_CAP);
        assert_eq!(psnr_from_mse(1e-30), PSNR_CAP);
        assert_eq!(psnr(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), PSNR_CAP);
    }

    #[test]
    fn metric_averages_channels() {
        let mse = metric_mse(&[1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(mse, 0.5);
        assert!(metric_mse(&[], &[]).is_err());
    }

    #[test]
    fn report_mean_matches_instances() {
        let scores: Vec<InstanceScore> = [20.0, 30.5, 41.25]
            .iter()
            .enumerate()
            .map(|(i, &p)| InstanceScore {
                index: i,
                name: format!("i{i}"),
                mse: 10f64.powf(-p / 10.0),
                psnr: p,
            })
            .collect();
        let r = PsnrReport::new("d".into(), "c".into(), "test".into(), scores);
        assert!((r.mean_psnr - (20.0 + 30.5 + 41.25) / 3.0).abs() < 1e-9);
        assert_eq!(r.to_csv().lines().count(), 4);
    }
}
