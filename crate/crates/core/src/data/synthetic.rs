//! Small procedural datasets for desk-scale experiments.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::Signal;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GratingParams {
    pub fx: f64,
    pub fy: f64,
    pub phase: f64,
}

/// `0.5 + 0.5 sin(2π(fx x + fy y) + ψ)` on an `n x n` grid, with `x` the
/// column and `y` the row pixel centre in `[0, 1]`.
pub fn grating(n: usize, p: GratingParams) -> Signal {
    let mut data = Vec::with_capacity(n * n);
    for row in 0..n {
        let y = (row as f64 + 0.5) / n as f64;
        for col in 0..n {
            let x = (col as f64 + 0.5) / n as f64;
            data.push(0.5 + 0.5 * (2.0 * PI * (p.fx * x + p.fy * y) + p.phase).sin());
        }
    }
    Signal {
        dims: vec![n, n],
        channels: 1,
        data,
    }
}

fn signed_freq(rng: &mut ChaCha8Rng) -> f64 {
    let f = rng.gen_range(1.0..=4.0);
    if rng.gen::<bool>() {
        f
    } else {
        -f
    }
}

/// `count` gratings with `|f| ∈ [1, 4]` per axis and uniform phase.
pub fn gratings(count: usize, n: usize, seed: u64) -> Vec<(Signal, Value)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let p = GratingParams {
                fx: signed_freq(&mut rng),
                fy: signed_freq(&mut rng),
                phase: rng.gen_range(0.0..2.0 * PI),
            };
            (grating(n, p), json!(p))
        })
        .collect()
}

/// Sums of three isotropic Gaussian blobs, clamped to `[0, 1]`.
pub fn gaussians(count: usize, n: usize, seed: u64) -> Vec<(Signal, Value)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let blobs: Vec<[f64; 4]> = (0..3)
                .map(|_| {
                    [
                        rng.gen_range(0.15..0.85),
                        rng.gen_range(0.15..0.85),
                        rng.gen_range(0.05..0.2),
                        rng.gen_range(0.3..1.0),
                    ]
                })
                .collect();
            let mut data = Vec::with_capacity(n * n);
            for row in 0..n {
                let y = (row as f64 + 0.5) / n as f64;
                for col in 0..n {
                    let x = (col as f64 + 0.5) / n as f64;
                    let v: f64 = blobs
                        .iter()
                        .map(|&[cx, cy, s, a]| a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s * s)).exp())
                        .sum();
                    data.push(v.clamp(0.0, 1.0));
                }
            }
            let sig = Signal {
                dims: vec![n, n],
                channels: 1,
                data,
            };
            (sig, json!({ "blobs": blobs }))
        })
        .collect()
}

/// Three-partial tones of `samples` length with frequencies in 50..400 Hz.
pub fn tones(count: usize, samples: usize, sample_rate: u32, seed: u64) -> Vec<(Signal, Value)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let partials: Vec<[f64; 3]> = (0..3)
                .map(|_| {
                    [
                        rng.gen_range(50.0..400.0),
                        rng.gen_range(0.05..0.3),
                        rng.gen_range(0.0..2.0 * PI),
                    ]
                })
                .collect();
            let data = (0..samples)
                .map(|i| {
                    let t = i as f64 / f64::from(sample_rate);
                    partials
                        .iter()
                        .map(|&[f, a, ph]| a * (2.0 * PI * f * t + ph).sin())
                        .sum()
                })
                .collect();
            let sig = Signal {
                dims: vec![samples],
                channels: 1,
                data,
            };
            (sig, json!({ "partials": partials }))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_frequency_grating_is_mid_gray() {
        let g = grating(
            8,
            GratingParams {
                fx: 0.0,
                fy: 0.0,
                phase: 0.0,
            },
        );
        assert!(g.data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn generators_are_seeded_and_bounded() {
        assert_eq!(gratings(4, 8, 1), gratings(4, 8, 1));
        assert_ne!(gratings(4, 8, 1)[0].0, gratings(4, 8, 2)[0].0);
        for (s, p) in gratings(16, 8, 3) {
            assert!(s.data.iter().all(|v| (0.0..=1.0).contains(v)));
            let p: GratingParams = serde_json::from_value(p).unwrap();
            assert!((1.0..=4.0).contains(&p.fx.abs()) && (1.0..=4.0).contains(&p.fy.abs()));
        }
        for (s, _) in gaussians(4, 8, 0) {
            assert!(s.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        for (s, _) in tones(2, 100, 16_000, 0) {
            assert!(s.data.iter().all(|v| v.abs() <= 0.9));
        }
    }
}
