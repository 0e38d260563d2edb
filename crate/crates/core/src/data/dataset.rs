use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{gaussians, gratings, image, tones, wav, Signal};
use crate::config::{DatasetKind, DatasetSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split {other:?}, expected train or test"
            ))),
        }
    }
}

/// All instances of one dataset plus a seeded, disjoint train/test split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub instances: Vec<Signal>,
    /// File name, or `synthetic-{i}`.
    pub names: Vec<String>,
    /// Generator parameters for synthetic instances (`null` for files).
    pub params: Vec<Value>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn list_files(dir: &Path, exts: &[&str]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(Error::io(dir))? {
        let path = entry.map_err(Error::io(dir))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if ext.is_some_and(|e| exts.contains(&e.as_str())) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no {exts:?} files in {}", dir.display())));
    }
    Ok(files)
}

impl Dataset {
    pub fn build(spec: &DatasetSpec) -> Result<Self> {
        let (signals, names, params): (Vec<Signal>, Vec<String>, Vec<Value>) = match spec.kind {
            DatasetKind::SyntheticGratings | DatasetKind::SyntheticGaussians | DatasetKind::SyntheticTones => {
                let items = match spec.kind {
                    DatasetKind::SyntheticGratings => gratings(spec.count, spec.resolution, spec.seed),
                    DatasetKind::SyntheticGaussians => gaussians(spec.count, spec.resolution, spec.seed),
                    _ => tones(spec.count, spec.resolution, spec.sample_rate, spec.seed),
                };
                let names = (0..items.len()).map(|i| format!("synthetic-{i}")).collect();
                let (s, p) = items.into_iter().unzip();
                (s, names, p)
            }
            DatasetKind::ImageDir | DatasetKind::WavDir => {
                let dir = spec
                    .path
                    .as_deref()
                    .ok_or_else(|| Error::Config("image_dir/wav_dir datasets need a path".into()))?;
                let is_image = spec.kind == DatasetKind::ImageDir;
                let exts: &[&str] = if is_image { &["png", "ppm", "pgm"] } else { &["wav"] };
                let mut files = list_files(dir, exts)?;
                if spec.count > 0 {
                    files.truncate(spec.count);
                }
                let mut signals = Vec::with_capacity(files.len());
                for f in &files {
                    signals.push(if is_image {
                        image::load_image(f)?.to_signal()
                    } else {
                        let w = wav::load_wav(f)?;
                        if w.sample_rate != spec.sample_rate {
                            return Err(Error::Data(format!(
                                "{} is sampled at {} Hz, dataset expects {} Hz",
                                f.display(),
                                w.sample_rate,
                                spec.sample_rate
                            )));
                        }
                        if w.samples.len() < spec.resolution {
                            return Err(Error::Data(format!(
                                "{} has {} samples, shorter than the {}-sample window",
                                f.display(),
                                w.samples.len(),
                                spec.resolution
                            )));
                        }
                        w.to_signal()
                    });
                }
                let names = files
                    .iter()
                    .map(|f| f.file_name().unwrap_or_default().to_string_lossy().into_owned())
                    .collect();
                let n = signals.len();
                (signals, names, vec![Value::Null; n])
            }
        };
        Self::from_signals(spec.clone(), signals, names, params)
    }

    pub fn from_signals(
        spec: DatasetSpec,
        instances: Vec<Signal>,
        names: Vec<String>,
        params: Vec<Value>,
    ) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::Data("dataset is empty".into()));
        }
        if spec.train > instances.len() {
            return Err(Error::Config(format!(
                "train split of {} exceeds the {} available instances",
                spec.train,
                instances.len()
            )));
        }
        let first = &instances[0];
        if first.is_image() {
            if let Some(bad) = instances
                .iter()
                .position(|s| s.dims != first.dims || s.channels != first.channels)
            {
                return Err(Error::Data(format!(
                    "instance {} has geometry {:?}x{} but instance 0 has {:?}x{}",
                    names[bad], instances[bad].dims, instances[bad].channels, first.dims, first.channels
                )));
            }
        }
        let mut order: Vec<usize> = (0..instances.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5EED_5B17));
        let mut train = order[..spec.train].to_vec();
        let mut test = order[spec.train..].to_vec();
        train.sort_unstable();
        test.sort_unstable();
        Ok(Self {
            spec,
            instances,
            names,
            params,
            train,
            test,
        })
    }

    pub fn split(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    /// Audio is randomly cropped to the configured window; images pass through.
    pub fn train_view(&self, idx: usize, rng: &mut impl Rng) -> Result<Signal> {
        let s = &self.instances[idx];
        if s.is_image() {
            return Ok(s.clone());
        }
        let len = self.spec.resolution;
        let start = rng.gen_range(0..=s.dims[0].saturating_sub(len));
        s.crop(start, len)
    }

    /// Audio is trimmed to the first window; images pass through.
    pub fn eval_view(&self, idx: usize) -> Result<Signal> {
        let s = &self.instances[idx];
        if s.is_image() {
            Ok(s.clone())
        } else {
            s.crop(0, self.spec.resolution)
        }
    }

    /// `(dims, channels)` of every evaluation view.
    pub fn geometry(&self) -> (Vec<usize>, usize) {
        let s = &self.instances[0];
        if s.is_image() {
            (s.dims.clone(), s.channels)
        } else {
            (vec![self.spec.resolution], s.channels)
        }
    }

    /// SHA-256 over every instance's geometry and values.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.instances {
            h.update((s.dims.len() as u64).to_le_bytes());
            for &d in &s.dims {
                h.update((d as u64).to_le_bytes());
            }
            h.update((s.channels as u64).to_le_bytes());
            for &x in &s.data {
                h.update(x.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }

    /// Files (or synthetic parameters) with their split assignment.
    pub fn manifest(&self) -> Value {
        let entries: Vec<Value> = (0..self.instances.len())
            .map(|i| {
                json!({
                    "index": i,
                    "name": self.names[i],
                    "split": if self.train.binary_search(&i).is_ok() { "train" } else { "test" },
                    "params": self.params[i],
                })
            })
            .collect();
        json!({
            "spec": self.spec,
            "hash": self.hash(),
            "instances": entries,
        })
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(count: usize, train: usize, seed: u64) -> DatasetSpec {
        DatasetSpec {
            kind: DatasetKind::SyntheticGratings,
            path: None,
            count,
            train,
            resolution: 8,
            sample_rate: 16_000,
            seed,
        }
    }

    #[test]
    fn hash_is_seed_reproducible() {
        let a = Dataset::build(&spec(10, 6, 1)).unwrap();
        assert_eq!(a.hash(), Dataset::build(&spec(10, 6, 1)).unwrap().hash());
        assert_ne!(a.hash(), Dataset::build(&spec(10, 6, 2)).unwrap().hash());
        assert_eq!(a.hash().len(), 64);
        assert_eq!(a.manifest()["instances"].as_array().unwrap().len(), 10);
    }

    #[test]
    fn oversized_train_split_is_config_error() {
        assert!(matches!(Dataset::build(&spec(4, 5, 0)), Err(Error::Config(_))));
    }

    #[test]
    fn image_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for (i, (s, _)) in gratings(3, 6, 0).into_iter().enumerate() {
            let img = image::Image8::from_signal(&s).unwrap();
            image::save_png(&dir.path().join(format!("{i}.png")), &img).unwrap();
        }
        let mut sp = spec(0, 2, 0);
        sp.kind = DatasetKind::ImageDir;
        sp.path = Some(dir.path().to_path_buf());
        let ds = Dataset::build(&sp).unwrap();
        assert_eq!(ds.instances.len(), 3);
        assert_eq!(ds.geometry(), (vec![6, 6], 1));
    }

    #[test]
    fn audio_views() {
        let mut sp = spec(2, 1, 0);
        sp.kind = DatasetKind::SyntheticTones;
        sp.resolution = 50;
        let ds = Dataset::build(&sp).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(ds.train_view(0, &mut rng).unwrap().dims, vec![50]);
        assert_eq!(ds.eval_view(1).unwrap().data, ds.instances[1].data[..50].to_vec());
    }

    proptest! {
        #[test]
        fn splits_are_disjoint(count in 1usize..60, frac in 0.0f64..1.0, seed in 0u64..500) {
            let train = (count as f64 * frac) as usize;
            let ds = Dataset::from_signals(
                spec(count, train, seed),
                vec![Signal::new(vec![1, 1], 1, vec![0.0]).unwrap(); count],
                vec![String::new(); count],
                vec![Value::Null; count],
            ).unwrap();
            prop_assert_eq!(ds.train.len() + ds.test.len(), count);
            prop_assert!(ds.train.iter().all(|i| ds.test.binary_search(i).is_err()));
        }
    }
}
