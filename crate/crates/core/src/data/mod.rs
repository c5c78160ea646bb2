//! Keyword corpus ingestion: label mapping, WAV loading, speaker-disjoint splits,
//! subset selection and training-time augmentation.
//!
//! The on-disk layout is one directory per word holding 16 kHz mono 16-bit WAV files
//! named `<speaker>_<anything>.wav`. Directories whose name starts with `_` are skipped
//! by [`load_dataset`]; `_background_noise_` is read separately by [`load_noise_pool`].

mod augment;
mod split;
mod subset;
pub mod synth;

pub use augment::{augment, mix_noise, shift, AugmentConfig, NoisePool};
pub use split::{read_manifest, split_by_speaker, write_manifest, DatasetSplit, SplitName};
pub use subset::SubsetSpec;

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16000;
/// One second at [`SAMPLE_RATE`].
pub const CLIP_LEN: usize = 16000;

pub const KEYWORDS: [&str; 10] = ["yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go"];

pub const FILLER_WORDS: [&str; 25] = [
    "backward", "bed", "bird", "cat", "dog", "eight", "five", "follow", "forward", "four", "happy",
    "house", "learn", "marvin", "nine", "one", "seven", "sheila", "six", "three", "tree", "two",
    "visual", "wow", "zero",
];

pub const NOISE_DIR: &str = "_background_noise_";

/// Word-to-class mapping. Keywords take classes `0..n`; when filler words are present
/// they all share class `n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub keywords: Vec<String>,
    pub filler_words: Vec<String>,
}

impl Default for LabelMap {
    fn default() -> Self {
        Self {
            keywords: KEYWORDS.iter().map(|s| s.to_string()).collect(),
            filler_words: FILLER_WORDS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl LabelMap {
    pub fn has_filler(&self) -> bool {
        !self.filler_words.is_empty()
    }

    pub fn filler_class(&self) -> Option<usize> {
        self.has_filler().then_some(self.keywords.len())
    }

    pub fn num_classes(&self) -> usize {
        self.keywords.len() + usize::from(self.has_filler())
    }

    pub fn class_of(&self, word: &str) -> Option<usize> {
        if let Some(i) = self.keywords.iter().position(|k| k == word) {
            return Some(i);
        }
        if self.filler_words.iter().any(|f| f == word) {
            return self.filler_class();
        }
        None
    }

    pub fn class_name(&self, class: usize) -> &str {
        match self.keywords.get(class) {
            Some(k) => k,
            None => "_filler_",
        }
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.keywords.iter().chain(&self.filler_words).map(String::as_str)
    }
}

/// A one-second mono clip.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub label: usize,
    pub speaker_id: String,
    /// Path relative to the corpus root, `/`-separated (`yes/abc_nohash_0.wav`).
    pub rel_path: String,
}

impl AudioClip {
    pub fn samples_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&v| v as f64).collect()
    }
}

/// Speaker id: the filename up to its first underscore.
pub fn speaker_from_filename(name: &str) -> &str {
    let stem = name.strip_suffix(".wav").unwrap_or(name);
    stem.split('_').next().unwrap_or(stem)
}

/// Reads a mono 16-bit PCM WAV file as samples in `[-1, 1)`.
pub fn read_wav(path: &Path, expected_rate: u32) -> Result<Vec<f32>> {
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.sample_rate != expected_rate || spec.channels != 1 {
        return Err(Error::InvalidAudio(format!(
            "{}: {} Hz, {} channels (want {expected_rate} Hz mono)",
            path.display(),
            spec.sample_rate,
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::InvalidAudio(format!(
            "{}: not 16-bit integer PCM",
            path.display()
        )));
    }
    reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0).map_err(Error::from))
        .collect()
}

pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    w.finalize()?;
    Ok(())
}

/// Pads a clip with trailing zeros to `len`; longer clips are rejected.
pub fn pad_clip(mut samples: Vec<f32>, len: usize) -> Result<Vec<f32>> {
    if samples.len() > len {
        return Err(Error::InvalidAudio(format!(
            "clip has {} samples, more than {len}",
            samples.len()
        )));
    }
    samples.resize(len, 0.0);
    Ok(samples)
}

/// Clips that loaded plus the files that did not.
#[derive(Debug, Default)]
pub struct LoadedDataset {
    pub clips: Vec<AudioClip>,
    pub errors: Vec<(PathBuf, Error)>,
}

/// Loads every WAV under the word directories of `root` known to `labels`,
/// sorted by relative path.
pub fn load_dataset(root: &Path, labels: &LabelMap) -> Result<LoadedDataset> {
    if !root.is_dir() {
        return Err(Error::MissingRoot(root.to_path_buf()));
    }
    let mut files = Vec::new();
    for word in labels.words() {
        let dir = root.join(word);
        if !dir.is_dir() {
            continue;
        }
        let class = labels.class_of(word).expect("word comes from the label map");
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "wav") {
                files.push((word.to_string(), class, path));
            }
        }
    }
    files.sort_by(|a, b| a.2.cmp(&b.2));
    let results: Vec<_> = files
        .into_par_iter()
        .map(|(word, label, path)| {
            let loaded = read_wav(&path, SAMPLE_RATE).and_then(|s| pad_clip(s, CLIP_LEN));
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let clip = loaded.map(|samples| AudioClip {
                samples,
                sample_rate: SAMPLE_RATE,
                label,
                speaker_id: speaker_from_filename(name).to_string(),
                rel_path: format!("{word}/{name}"),
            });
            (path, clip)
        })
        .collect();
    let mut out = LoadedDataset::default();
    for (path, r) in results {
        match r {
            Ok(c) => out.clips.push(c),
            Err(e) => out.errors.push((path, e)),
        }
    }
    Ok(out)
}

/// Reads the background-noise recordings under `root/_background_noise_`, if any.
pub fn load_noise_pool(root: &Path) -> Result<NoisePool> {
    let dir = root.join(NOISE_DIR);
    let mut pool = Vec::new();
    if dir.is_dir() {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        paths.retain(|p| p.extension().is_some_and(|e| e == "wav"));
        paths.sort();
        for p in paths {
            pool.push(read_wav(&p, SAMPLE_RATE)?);
        }
    }
    Ok(NoisePool::new(pool))
}

/// Per-class clip counts.
pub fn class_histogram(clips: &[AudioClip], num_classes: usize) -> Vec<usize> {
    let mut h = vec![0; num_classes];
    for c in clips {
        h[c.label] += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_label_map() {
        let m = LabelMap::default();
        assert_eq!(m.keywords, KEYWORDS);
        assert_eq!(m.filler_words.len(), 25);
        assert_eq!(m.num_classes(), 11);
        assert_eq!(m.class_of("yes"), Some(0));
        assert_eq!(m.class_of("go"), Some(9));
        assert_eq!(m.class_of("marvin"), Some(10));
        assert_eq!(m.class_of("banana"), None);
    }

    #[test]
    fn speaker_is_prefix_before_underscore() {
        assert_eq!(speaker_from_filename("abc_nohash_0.wav"), "abc");
        assert_eq!(speaker_from_filename("0a7c2a8d_nohash_1.wav"), "0a7c2a8d");
    }

    #[test]
    fn single_file_layout_and_padding() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("yes")).unwrap();
        std::fs::create_dir(dir.path().join("marvin")).unwrap();
        write_wav(&dir.path().join("yes/abc_nohash_0.wav"), &vec![0.25; 16000], 16000).unwrap();
        write_wav(&dir.path().join("marvin/def_nohash_0.wav"), &vec![0.5; 8000], 16000).unwrap();
        let got = load_dataset(dir.path(), &LabelMap::default()).unwrap();
        assert!(got.errors.is_empty());
        assert_eq!(got.clips.len(), 2);
        let yes = got.clips.iter().find(|c| c.label == 0).unwrap();
        assert_eq!(yes.speaker_id, "abc");
        assert_eq!(yes.rel_path, "yes/abc_nohash_0.wav");
        let filler = got.clips.iter().find(|c| c.label == 10).unwrap();
        assert_eq!(filler.samples.len(), 16000);
        assert!(filler.samples[..8000].iter().all(|&v| (v - 0.5).abs() < 1e-4));
        assert!(filler.samples[8000..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bad_files_are_reported_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("no")).unwrap();
        write_wav(&dir.path().join("no/a_nohash_0.wav"), &vec![0.0; 16000], 8000).unwrap();
        write_wav(&dir.path().join("no/b_nohash_0.wav"), &vec![0.0; 17000], 16000).unwrap();
        std::fs::write(dir.path().join("no/c_nohash_0.wav"), b"garbage").unwrap();
        write_wav(&dir.path().join("no/d_nohash_0.wav"), &vec![0.0; 16000], 16000).unwrap();
        let got = load_dataset(dir.path(), &LabelMap::default()).unwrap();
        assert_eq!(got.clips.len(), 1);
        assert_eq!(got.errors.len(), 3);
    }

    #[test]
    fn missing_root_is_fatal() {
        assert!(matches!(
            load_dataset(Path::new("/nonexistent/corpus"), &LabelMap::default()),
            Err(Error::MissingRoot(_))
        ));
    }
}
