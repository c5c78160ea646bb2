//! Synthetic corpus in the keyword-dataset directory layout.
//!
//! Each word gets a fixed signature of three tone-pair segments; every utterance jitters
//! pitch, onset and level per speaker, so the classes are learnable but not trivial.
//! Useful for tests and desk-scale runs when the real corpus is unavailable.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{write_wav, CLIP_LEN, FILLER_WORDS, NOISE_DIR, SAMPLE_RATE};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub speakers: usize,
    /// Every speaker records each of these once.
    pub keywords: Vec<String>,
    /// Filler utterances per speaker, cycling through the filler words.
    pub fillers_per_speaker: usize,
    pub noise_files: usize,
    pub noise_seconds: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            speakers: 200,
            keywords: ["yes", "no", "up"].iter().map(|s| s.to_string()).collect(),
            fillers_per_speaker: 1,
            noise_files: 2,
            noise_seconds: 10.0,
            seed: 0,
        }
    }
}

struct Segment {
    start: f64,
    dur: f64,
    f1: f64,
    f2: f64,
    glide: f64,
}

fn word_seed(word: &str) -> u64 {
    // FNV-1a
    word.bytes()
        .fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

fn signature(word: &str) -> Vec<Segment> {
    let mut rng = ChaCha8Rng::seed_from_u64(word_seed(word));
    let log_uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| (rng.random_range(lo.ln()..hi.ln())).exp();
    let mut t = 0.0;
    (0..3)
        .map(|_| {
            let dur = rng.random_range(0.09..0.18);
            let s = Segment {
                start: t,
                dur,
                f1: log_uniform(&mut rng, 250.0, 900.0),
                f2: log_uniform(&mut rng, 900.0, 3600.0),
                glide: rng.random_range(-0.2..0.2),
            };
            t += dur + rng.random_range(0.0..0.05);
            s
        })
        .collect()
}

/// One utterance of `word` with speaker pitch factor `pitch`.
pub fn utterance<R: Rng + ?Sized>(word: &str, pitch: f64, rng: &mut R) -> Vec<f32> {
    let fs = SAMPLE_RATE as f64;
    let mut out = vec![0.0f64; CLIP_LEN];
    let onset = rng.random_range(0.1..0.35);
    let level = rng.random_range(0.2..0.4);
    let jitter = pitch * rng.random_range(0.97..1.03);
    for seg in signature(word) {
        let n0 = ((onset + seg.start) * fs) as usize;
        let n = (seg.dur * fs) as usize;
        let (mut p1, mut p2) = (0.0f64, 0.0f64);
        for i in 0..n.min(CLIP_LEN.saturating_sub(n0)) {
            let u = i as f64 / n as f64;
            let env = 0.5 - 0.5 * (2.0 * PI * u).cos();
            let g = 1.0 + seg.glide * u;
            p1 += 2.0 * PI * seg.f1 * jitter * g / fs;
            p2 += 2.0 * PI * seg.f2 * jitter * g / fs;
            out[n0 + i] += level * env * (p1.sin() + 0.6 * p2.sin());
        }
    }
    for v in out.iter_mut() {
        *v += 0.005 * rng.random_range(-1.0..1.0);
    }
    out.into_iter().map(|v| v.clamp(-1.0, 1.0) as f32).collect()
}

fn noise<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f32> {
    let a = rng.random_range(0.5..0.95);
    let mut y = 0.0f64;
    (0..len)
        .map(|_| {
            y = a * y + (1.0 - a) * rng.random_range(-1.0..1.0);
            (3.0 * y).clamp(-1.0, 1.0) as f32
        })
        .collect()
}

/// Writes the corpus under `root`; returns the number of word clips written.
pub fn write_corpus(root: &Path, cfg: &SynthConfig) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut written = 0;
    for w in cfg.keywords.iter().map(String::as_str).chain(FILLER_WORDS) {
        std::fs::create_dir_all(root.join(w))?;
    }
    for s in 0..cfg.speakers {
        let speaker = format!("{:08x}", rng.random::<u32>());
        let pitch = rng.random_range(0.9..1.1);
        let fillers = (0..cfg.fillers_per_speaker).map(|j| FILLER_WORDS[(s * cfg.fillers_per_speaker + j) % FILLER_WORDS.len()]);
        for word in cfg.keywords.iter().map(String::as_str).chain(fillers) {
            let samples = utterance(word, pitch, &mut rng);
            let dir = root.join(word);
            let mut k = 0;
            let path = loop {
                let p = dir.join(format!("{speaker}_nohash_{k}.wav"));
                if !p.exists() {
                    break p;
                }
                k += 1;
            };
            write_wav(&path, &samples, SAMPLE_RATE)?;
            written += 1;
        }
    }
    if cfg.noise_files > 0 {
        std::fs::create_dir_all(root.join(NOISE_DIR))?;
        let len = (cfg.noise_seconds * SAMPLE_RATE as f64) as usize;
        for i in 0..cfg.noise_files {
            let n = noise(len, &mut rng);
            write_wav(&root.join(NOISE_DIR).join(format!("noise_{i}.wav")), &n, SAMPLE_RATE)?;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_dataset, load_noise_pool, SubsetSpec};

    #[test]
    fn corpus_loads_with_expected_counts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            speakers: 6,
            noise_files: 1,
            noise_seconds: 2.0,
            ..SynthConfig::default()
        };
        assert_eq!(write_corpus(dir.path(), &cfg).unwrap(), 24);
        let subset: SubsetSpec = "3kw+filler".parse().unwrap();
        let got = load_dataset(dir.path(), &subset.label_map()).unwrap();
        assert!(got.errors.is_empty());
        assert_eq!(got.clips.len(), 24);
        assert_eq!(crate::data::class_histogram(&got.clips, 4), vec![6, 6, 6, 6]);
        assert_eq!(load_noise_pool(dir.path()).unwrap().len(), 1);
    }

    #[test]
    fn signatures_differ_between_words() {
        let a = signature("yes");
        let b = signature("no");
        assert!((a[0].f1 - b[0].f1).abs() > 1e-6);
        assert_eq!(signature("yes")[1].f2, a[1].f2);
    }
}
