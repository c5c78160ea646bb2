//! Random time shift and background-noise mixing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AudioClip;

/// Background recordings to draw noise segments from.
#[derive(Clone, Debug, Default)]
pub struct NoisePool {
    sources: Vec<Vec<f32>>,
}

impl NoisePool {
    pub fn new(sources: Vec<Vec<f32>>) -> Self {
        Self {
            sources: sources.into_iter().filter(|s| !s.is_empty()).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    /// A random segment of `len` samples, wrapping around sources shorter than that.
    pub fn segment<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Option<Vec<f32>> {
        if self.sources.is_empty() {
            return None;
        }
        let src = &self.sources[rng.random_range(0..self.sources.len())];
        let start = if src.len() > len {
            rng.random_range(0..=src.len() - len)
        } else {
            0
        };
        Some((0..len).map(|i| src[(start + i) % src.len()]).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub max_shift_ms: f64,
    pub noise_prob: f64,
    pub max_noise_gain: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            max_shift_ms: 100.0,
            noise_prob: 0.8,
            max_noise_gain: 0.1,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }
}

/// Delays the signal by `n` samples (advances it for negative `n`), filling with zeros.
pub fn shift(samples: &[f32], n: isize) -> Vec<f32> {
    let len = samples.len() as isize;
    (0..len)
        .map(|i| {
            let src = i - n;
            if (0..len).contains(&src) {
                samples[src as usize]
            } else {
                0.0
            }
        })
        .collect()
}

/// `x + gain * noise`, clamped to `[-1, 1]`.
pub fn mix_noise(samples: &mut [f32], noise: &[f32], gain: f32) {
    for (x, n) in samples.iter_mut().zip(noise) {
        *x = (*x + gain * n).clamp(-1.0, 1.0);
    }
}

/// Shift uniformly within `±max_shift_ms`, then with probability `noise_prob` add a noise
/// segment scaled by a gain drawn from `U[0, max_noise_gain]`.
pub fn augment<R: Rng + ?Sized>(clip: &AudioClip, noise: &NoisePool, cfg: &AugmentConfig, rng: &mut R) -> AudioClip {
    if !cfg.enabled {
        return clip.clone();
    }
    let max_shift = (cfg.max_shift_ms * 1e-3 * clip.sample_rate as f64).round() as i64;
    let n = rng.random_range(-max_shift..=max_shift) as isize;
    let mut samples = shift(&clip.samples, n);
    if !noise.is_empty() && rng.random_bool(cfg.noise_prob) {
        let gain = rng.random_range(0.0..=cfg.max_noise_gain) as f32;
        if let Some(seg) = noise.segment(samples.len(), rng) {
            mix_noise(&mut samples, &seg, gain);
        }
    }
    AudioClip {
        samples,
        ..clip.clone()
    }
}
