//! Cutting instances into raster-ordered, non-overlapping patch tokens.

use composer_autodiff::{Scalar, Tensor};

use crate::config::TokenizerConfig;
use crate::data::Signal;
use crate::error::{Error, Result};

/// Raw patch vectors of one instance, one row per token.
#[derive(Debug, Clone)]
pub struct TokenSequence<T: Scalar> {
    pub patches: Tensor<T>,
}

impl<T: Scalar> TokenSequence<T> {
    pub fn len(&self) -> usize {
        self.patches.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn patch_dim(&self) -> usize {
        self.patches.shape()[1]
    }
}

/// Zero-pads an image symmetrically (extra row/column at the end) to `target`.
pub fn pad_image(image: &Signal, target: [usize; 2]) -> Result<Signal> {
    let (h, w, c) = (image.dims[0], image.dims[1], image.channels);
    let [th, tw] = target;
    if th < h || tw < w {
        return Err(Error::Data(format!("cannot pad {h}x{w} image down to {th}x{tw}")));
    }
    let (top, left) = ((th - h) / 2, (tw - w) / 2);
    let mut data = vec![0.0; th * tw * c];
    for r in 0..h {
        let src = &image.data[r * w * c..(r + 1) * w * c];
        let at = ((r + top) * tw + left) * c;
        data[at..at + w * c].copy_from_slice(src);
    }
    Signal::new(vec![th, tw], c, data)
}

/// `(H/p)(W/p)` tokens of length `p·p·C`, patches in raster order and pixels
/// within a patch in raster order with channels innermost.
pub fn patchify_image<T: Scalar>(image: &Signal, patch: usize, pad_to: Option<[usize; 2]>) -> Result<TokenSequence<T>> {
    if !image.is_image() {
        return Err(Error::Data(format!("expected an image, got dims {:?}", image.dims)));
    }
    if patch == 0 {
        return Err(Error::Config("patch size must be positive".into()));
    }
    let padded;
    let image = match pad_to {
        Some(t) => {
            padded = pad_image(image, t)?;
            &padded
        }
        None => image,
    };
    let (h, w, c) = (image.dims[0], image.dims[1], image.channels);
    if h % patch != 0 || w % patch != 0 {
        return Err(Error::Data(format!(
            "{h}x{w} image is not divisible into {patch}x{patch} patches; set pad_to"
        )));
    }
    let (gh, gw) = (h / patch, w / patch);
    let dim = patch * patch * c;
    let mut out = Vec::with_capacity(gh * gw * dim);
    for pr in 0..gh {
        for pc in 0..gw {
            for r in 0..patch {
                let row = pr * patch + r;
                let start = (row * w + pc * patch) * c;
                out.extend(image.data[start..start + patch * c].iter().map(|&x| T::from_f64(x)));
            }
        }
    }
    Ok(TokenSequence {
        patches: Tensor::from_vec(&[gh * gw, dim], out)?,
    })
}

/// `floor(S/p)` consecutive windows; a trailing partial window is cropped.
pub fn unfold_audio<T: Scalar>(signal: &Signal, patch: usize) -> Result<TokenSequence<T>> {
    if signal.dims.len() != 1 {
        return Err(Error::Data(format!(
            "expected a 1-D signal, got dims {:?}",
            signal.dims
        )));
    }
    let s = signal.dims[0];
    if patch == 0 || s < patch {
        return Err(Error::Data(format!("{s} samples cannot fill one {patch}-sample patch")));
    }
    let t = s / patch;
    let dim = patch * signal.channels;
    let data = signal.data[..t * dim].iter().map(|&x| T::from_f64(x)).collect();
    Ok(TokenSequence {
        patches: Tensor::from_vec(&[t, dim], data)?,
    })
}

pub fn tokenize<T: Scalar>(cfg: &TokenizerConfig, signal: &Signal) -> Result<TokenSequence<T>> {
    match cfg {
        TokenizerConfig::Image { patch, pad_to } => patchify_image(signal, *patch, *pad_to),
        TokenizerConfig::Audio { patch } => unfold_audio(signal, *patch),
    }
}

/// `(token count, patch vector length)` for a signal of the given geometry.
pub fn token_geometry(cfg: &TokenizerConfig, dims: &[usize], channels: usize) -> Result<(usize, usize)> {
    match (cfg, dims) {
        (TokenizerConfig::Image { patch, pad_to }, &[h, w]) => {
            let [h, w] = pad_to.unwrap_or([h, w]);
            if *patch == 0 || h % patch != 0 || w % patch != 0 {
                return Err(Error::Data(format!("{h}x{w} is not divisible by patch {patch}")));
            }
            Ok(((h / patch) * (w / patch), patch * patch * channels))
        }
        (TokenizerConfig::Audio { patch }, &[s]) => {
            if *patch == 0 || s < *patch {
                return Err(Error::Data(format!("{s} samples cannot fill one {patch}-sample patch")));
            }
            Ok((s / patch, patch * channels))
        }
        _ => Err(Error::Config(format!(
            "tokenizer {cfg:?} does not match signal dims {dims:?}"
        ))),
    }
}
