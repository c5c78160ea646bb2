//! Speaker-disjoint train/validation/test partitioning and its text manifest.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::AudioClip;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(SplitName::Train),
            "validation" => Some(SplitName::Validation),
            "test" => Some(SplitName::Test),
            _ => None,
        }
    }
}

/// Indices into the clip list each split was built from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub fractions: (f64, f64, f64),
}

impl DatasetSplit {
    pub fn get(&self, which: SplitName) -> &[usize] {
        match which {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }

    fn get_mut(&mut self, which: SplitName) -> &mut Vec<usize> {
        match which {
            SplitName::Train => &mut self.train,
            SplitName::Validation => &mut self.validation,
            SplitName::Test => &mut self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select<'a>(&self, clips: &'a [AudioClip], which: SplitName) -> Vec<&'a AudioClip> {
        self.get(which).iter().map(|&i| &clips[i]).collect()
    }
}

const ORDER: [SplitName; 3] = [SplitName::Train, SplitName::Validation, SplitName::Test];

/// Shuffles speakers with `seed` and assigns whole speakers to splits.
///
/// Validation and test each receive one speaker first so neither is empty; every later
/// speaker goes to the split furthest below its target clip count.
pub fn split_by_speaker(clips: &[AudioClip], fractions: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    let (ft, fv, fe) = fractions;
    if [ft, fv, fe].iter().any(|f| !(0.0..=1.0).contains(f)) || ((ft + fv + fe) - 1.0).abs() > 1e-9 {
        return Err(Error::Split(format!("fractions {fractions:?} must be in [0, 1] and sum to 1")));
    }
    let mut by_speaker: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in clips.iter().enumerate() {
        by_speaker.entry(c.speaker_id.as_str()).or_default().push(i);
    }
    if by_speaker.len() < 3 {
        return Err(Error::Split(format!(
            "need at least 3 speakers, found {}",
            by_speaker.len()
        )));
    }
    let mut speakers: Vec<Vec<usize>> = by_speaker.into_values().collect();
    speakers.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let total = clips.len() as f64;
    let targets = [ft * total, fv * total, fe * total];
    let mut counts = [0usize; 3];
    let mut split = DatasetSplit {
        fractions,
        ..Default::default()
    };
    for (n, members) in speakers.into_iter().enumerate() {
        let slot = match n {
            0 => 1,
            1 => 2,
            _ => (0..3)
                .max_by(|&a, &b| {
                    let da = targets[a] - counts[a] as f64;
                    let db = targets[b] - counts[b] as f64;
                    da.total_cmp(&db).then(b.cmp(&a))
                })
                .expect("three splits"),
        };
        counts[slot] += members.len();
        split.get_mut(ORDER[slot]).extend(members);
    }
    for s in ORDER {
        split.get_mut(s).sort_unstable();
    }
    Ok(split)
}

/// One `relative/path<TAB>split` line per clip, in clip order.
pub fn write_manifest<W: Write>(mut w: W, clips: &[AudioClip], split: &DatasetSplit) -> Result<()> {
    let mut name = vec![None; clips.len()];
    for s in ORDER {
        for &i in split.get(s) {
            name[i] = Some(s.as_str());
        }
    }
    for (c, n) in clips.iter().zip(name) {
        if let Some(n) = n {
            writeln!(w, "{}\t{n}", c.rel_path)?;
        }
    }
    Ok(())
}

/// Rebuilds a split for `clips` from a manifest; clips missing from it are left out.
pub fn read_manifest<R: BufRead>(r: R, clips: &[AudioClip], fractions: (f64, f64, f64)) -> Result<DatasetSplit> {
    let index: HashMap<&str, usize> = clips.iter().enumerate().map(|(i, c)| (c.rel_path.as_str(), i)).collect();
    let mut split = DatasetSplit {
        fractions,
        ..Default::default()
    };
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (path, which) = line
            .split_once('\t')
            .ok_or_else(|| Error::Split(format!("manifest line {}: missing tab", ln + 1)))?;
        let which = SplitName::parse(which)
            .ok_or_else(|| Error::Split(format!("manifest line {}: unknown split {which:?}", ln + 1)))?;
        if let Some(&i) = index.get(path) {
            split.get_mut(which).push(i);
        }
    }
    for s in ORDER {
        split.get_mut(s).sort_unstable();
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn clips(speakers: &[(String, usize)]) -> Vec<AudioClip> {
        let mut out = Vec::new();
        for (s, n) in speakers {
            for j in 0..*n {
                out.push(AudioClip {
                    samples: vec![],
                    sample_rate: 16000,
                    label: j % 11,
                    speaker_id: s.clone(),
                    rel_path: format!("w{}/{s}_nohash_{j}.wav", j % 11),
                });
            }
        }
        out
    }

    fn speakers_of(c: &[AudioClip], idx: &[usize]) -> HashSet<String> {
        idx.iter().map(|&i| c[i].speaker_id.clone()).collect()
    }

    #[test]
    fn ten_single_clip_speakers_split_8_1_1() {
        let c = clips(&(0..10).map(|i| (format!("s{i}"), 1)).collect::<Vec<_>>());
        let s = split_by_speaker(&c, (0.8, 0.1, 0.1), 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (8, 1, 1));
        assert_eq!(s, split_by_speaker(&c, (0.8, 0.1, 0.1), 3).unwrap());
    }

    #[test]
    fn too_few_speakers() {
        let c = clips(&[("a".into(), 5), ("b".into(), 5)]);
        assert!(matches!(split_by_speaker(&c, (0.8, 0.1, 0.1), 0), Err(Error::Split(_))));
    }

    #[test]
    fn manifest_roundtrip() {
        let c = clips(&(0..30).map(|i| (format!("s{i}"), 1 + i % 4)).collect::<Vec<_>>());
        let s = split_by_speaker(&c, (0.8, 0.1, 0.1), 9).unwrap();
        let mut buf = Vec::new();
        write_manifest(&mut buf, &c, &s).unwrap();
        assert_eq!(String::from_utf8_lossy(&buf).lines().count(), c.len());
        assert_eq!(read_manifest(&buf[..], &c, s.fractions).unwrap(), s);
    }

    proptest! {
        #[test]
        fn disjoint_complete_and_near_target(
            counts in prop::collection::vec(1usize..12, 100..160),
            seed in any::<u64>(),
        ) {
            let c = clips(&counts.iter().enumerate().map(|(i, &n)| (format!("spk{i:03}"), n)).collect::<Vec<_>>());
            let s = split_by_speaker(&c, (0.8, 0.1, 0.1), seed).unwrap();
            let (a, b, d) = (speakers_of(&c, &s.train), speakers_of(&c, &s.validation), speakers_of(&c, &s.test));
            prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&d) && b.is_disjoint(&d));
            let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..c.len()).collect::<Vec<_>>());
            let n = c.len() as f64;
            for (got, want) in [(s.train.len(), 0.8), (s.validation.len(), 0.1), (s.test.len(), 0.1)] {
                prop_assert!((got as f64 / n - want).abs() <= 0.02);
            }
        }
    }
}
