//! Named training regimes run as repeated, independently seeded trials.
//!
//! Every trial writes `trials/seed_<s>/{model.ckpt,history.csv,trial.json}` under the
//! output directory; the aggregate `report.json` is reduced from those files once all
//! trials have finished.

mod check;
mod name;
mod plots;
mod stats;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use check::{pipeline_gradcheck, PipelineCheck, ProbeResult, RefinedCheck};
pub use name::{GammachirpRegime, Regime, DEFAULT_EPOCHS};
pub use plots::{emit_plots, emit_removal_plots};
pub use stats::{ci_overlap, summarize, t_critical_975, Overlap, Summary, CI_METHOD};

use crate::autodiff::checkpoint::{load_checkpoint, save_checkpoint};
use crate::backend::{
    build_model, evaluate, train, EpochRecord, Fusion, KwsSystem, ResNetConfig, Stage, TrainConfig, TrainData,
    TrialRng,
};
use crate::data::{
    load_dataset, load_noise_pool, split_by_speaker, AudioClip, DatasetSplit, LabelMap, NoisePool, SplitName,
    SubsetSpec, CLIP_LEN,
};
use crate::dsp::{triangular_filterbank, FramingConfig, TriangleNorm};
use crate::error::{Error, Result};
use crate::frontends::{
    init_gammachirp, CochleagramMode, EffectiveGammachirp, FilterbankMatrix, Frontend, GammachirpFrontend,
    InitScale, DEFAULT_KERNEL_LENGTH,
};

pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.8, 0.1, 0.1);

/// Front-end settings not carried by the regime name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontendOptions {
    pub num_channels: usize,
    /// Initial filterbank of matrix regimes.
    pub matrix_init: InitScale,
    pub cochleagram: CochleagramMode,
    pub kernel_length: usize,
}

impl Default for FrontendOptions {
    fn default() -> Self {
        Self {
            num_channels: 40,
            matrix_init: InitScale::Mel,
            cochleagram: CochleagramMode::default(),
            kernel_length: DEFAULT_KERNEL_LENGTH,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub regime: Regime,
    pub frontend: FrontendOptions,
    pub preset: String,
    pub backend: ResNetConfig,
    pub train: TrainConfig,
    pub repetitions: usize,
    pub base_seed: u64,
}

impl ExperimentSpec {
    /// Defaults: 10 repetitions from seed 0, 40 channels, default training settings.
    pub fn new(name: &str, preset: &str) -> Result<Self> {
        Ok(Self {
            regime: name.parse()?,
            frontend: FrontendOptions::default(),
            preset: preset.to_string(),
            backend: ResNetConfig::preset(preset)?,
            train: TrainConfig::default(),
            repetitions: 10,
            base_seed: 0,
        })
    }

    pub fn name(&self) -> String {
        self.regime.to_string()
    }

    pub fn seeds(&self) -> std::ops::Range<u64> {
        self.base_seed..self.base_seed + self.repetitions as u64
    }
}

/// Clips, their speaker split, label map and noise sources.
pub struct ExperimentData {
    pub clips: Vec<AudioClip>,
    pub split: DatasetSplit,
    pub labels: LabelMap,
    pub noise: NoisePool,
    pub subset: Option<String>,
}

impl ExperimentData {
    /// Loads `root`, restricts it to `subset` and splits by speaker.
    ///
    /// Per-file load errors are returned alongside, not raised.
    pub fn load(root: &Path, subset: &SubsetSpec, split_seed: u64) -> Result<(Self, Vec<(PathBuf, Error)>)> {
        let labels = subset.label_map();
        let loaded = load_dataset(root, &labels)?;
        let clips = subset.select(loaded.clips);
        if clips.is_empty() {
            return Err(Error::Experiment(format!("no clips under {} for subset {subset}", root.display())));
        }
        let split = split_by_speaker(&clips, DEFAULT_SPLIT, split_seed)?;
        let noise = load_noise_pool(root)?;
        Ok((
            Self {
                clips,
                split,
                labels,
                noise,
                subset: Some(subset.to_string()),
            },
            loaded.errors,
        ))
    }

    pub fn select(&self, which: SplitName) -> Vec<&AudioClip> {
        self.split.select(&self.clips, which)
    }

    fn info(&self) -> DatasetInfo {
        DatasetInfo {
            subset: self.subset.clone(),
            classes: (0..self.labels.num_classes())
                .map(|c| self.labels.class_name(c).to_string())
                .collect(),
            train: self.split.train.len(),
            validation: self.split.validation.len(),
            test: self.split.test.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub subset: Option<String>,
    pub classes: Vec<String>,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

/// Fresh front-end for `regime`, drawing any random initial values from `rng`.
pub fn build_frontend<R: rand::Rng + ?Sized>(
    regime: &Regime,
    opts: &FrontendOptions,
    rng: &mut R,
) -> Result<Frontend> {
    let framing = FramingConfig::default();
    let sr = framing.sample_rate as f64;
    match regime {
        Regime::Matrix(_) => {
            let fb = triangular_filterbank(
                framing.num_bins(),
                opts.num_channels,
                sr,
                0.0,
                sr / 2.0,
                opts.matrix_init.filterbank_scale(),
                TriangleNorm::Peak,
            )?;
            Ok(Frontend::Matrix(FilterbankMatrix::from_reference(&fb)?))
        }
        Regime::Gammachirp(g) => {
            let mut p = init_gammachirp(g.scale, g.init, opts.num_channels, sr, rng)?;
            p.kernel_length = opts.kernel_length;
            if g.gammatone {
                p.make_gammatone();
            }
            Ok(Frontend::Gammachirp(GammachirpFrontend::new(p, opts.cochleagram)))
        }
    }
}

/// Wraps front-ends and a back-end sized for their feature maps.
pub fn build_system<R: rand::Rng + ?Sized>(
    frontends: Vec<Frontend>,
    fusion: Fusion,
    template: &ResNetConfig,
    classes: usize,
    rng: &mut R,
) -> Result<KwsSystem> {
    let t = frontends[0]
        .num_frames(CLIP_LEN)
        .ok_or_else(|| Error::Model("clip shorter than one frame".into()))?;
    if let Some(f) = frontends.iter().find(|f| f.num_frames(CLIP_LEN) != Some(t)) {
        return Err(Error::Model(format!(
            "front-ends disagree on frame count: {t} vs {:?}",
            f.num_frames(CLIP_LEN)
        )));
    }
    let ks: Vec<usize> = frontends.iter().map(Frontend::num_channels).collect();
    let (in_channels, k) = match (frontends.len(), fusion) {
        (1, _) => (1, ks[0]),
        (_, Fusion::Stack) => {
            if ks.iter().any(|&k| k != ks[0]) {
                return Err(Error::Model(format!("stacked fusion needs equal channel counts, got {ks:?}")));
            }
            (frontends.len(), ks[0])
        }
        (_, Fusion::FreqConcat) => (1, ks.iter().sum()),
    };
    let cfg = ResNetConfig {
        n_classes: classes,
        input_shape: (t, k),
        in_channels,
        ..template.clone()
    };
    let backend = build_model(&cfg, rng)?;
    KwsSystem::new(frontends, fusion, backend)
}

/// Learned front-end state of one trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnedFrontend {
    /// `relu(W)`, `[bin][channel]`.
    Matrix { weights: Vec<Vec<f64>>, center_hz: Vec<f64> },
    Gammachirp(EffectiveGammachirp),
}

impl LearnedFrontend {
    pub fn from_frontend(fe: &Frontend) -> Self {
        match fe {
            Frontend::Matrix(m) => {
                let w = m.effective_weights();
                let k = w.shape()[1];
                LearnedFrontend::Matrix {
                    weights: w.data().chunks(k).map(<[f64]>::to_vec).collect(),
                    center_hz: m.center_freqs.clone(),
                }
            }
            Frontend::Gammachirp(g) => LearnedFrontend::Gammachirp(g.params.effective()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub seed: u64,
    pub test_accuracy: f64,
    /// `confusion[true][predicted]` on the test split.
    pub confusion: Vec<Vec<usize>>,
    pub final_train_loss: f64,
    pub final_val_accuracy: Option<f64>,
    pub frontends: Vec<LearnedFrontend>,
}

fn mean_columns(rows: &[&Vec<f64>]) -> Vec<f64> {
    let n = rows.len() as f64;
    let mut out = vec![0.0; rows.first().map_or(0, |r| r.len())];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r.iter()) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= n);
    out
}

/// Learned front-end parameters aggregated over trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrontendSummary {
    Matrix {
        bin_hz: Vec<f64>,
        /// Mean of `relu(W)` over trials, `[bin][channel]`.
        mean_weights: Vec<Vec<f64>>,
        center_hz: Vec<f64>,
    },
    Gammachirp {
        n: Summary,
        b: Summary,
        c: Summary,
        gain_mean: Vec<f64>,
        center_hz_mean: Vec<f64>,
        erb_hz_mean: Vec<f64>,
        per_trial: Vec<EffectiveGammachirp>,
    },
}

impl FrontendSummary {
    /// Aggregates the same front-end slot of several trials.
    pub fn from_learned(items: &[&LearnedFrontend]) -> Result<Self> {
        match items.first() {
            Some(LearnedFrontend::Matrix { weights, center_hz }) => {
                let f = weights.len();
                let k = weights.first().map_or(0, Vec::len);
                let mut acc = vec![vec![0.0; k]; f];
                for it in items {
                    let LearnedFrontend::Matrix { weights, .. } = it else {
                        return Err(Error::Experiment("mixed front-end kinds in one slot".into()));
                    };
                    for (a, w) in acc.iter_mut().zip(weights) {
                        for (x, y) in a.iter_mut().zip(w) {
                            *x += y;
                        }
                    }
                }
                let n = items.len() as f64;
                acc.iter_mut().flatten().for_each(|v| *v /= n);
                let nyquist = FramingConfig::default().sample_rate as f64 / 2.0;
                Ok(FrontendSummary::Matrix {
                    bin_hz: (0..f).map(|i| i as f64 * nyquist / (f - 1).max(1) as f64).collect(),
                    mean_weights: acc,
                    center_hz: center_hz.clone(),
                })
            }
            Some(LearnedFrontend::Gammachirp(_)) => {
                let mut per_trial = Vec::with_capacity(items.len());
                for it in items {
                    let LearnedFrontend::Gammachirp(g) = it else {
                        return Err(Error::Experiment("mixed front-end kinds in one slot".into()));
                    };
                    per_trial.push(g.clone());
                }
                let col = |f: fn(&EffectiveGammachirp) -> f64| summarize(&per_trial.iter().map(f).collect::<Vec<_>>());
                let vecs = |f: fn(&EffectiveGammachirp) -> &Vec<f64>| mean_columns(&per_trial.iter().map(f).collect::<Vec<_>>());
                Ok(FrontendSummary::Gammachirp {
                    n: col(|g| g.n),
                    b: col(|g| g.b),
                    c: col(|g| g.c),
                    gain_mean: vecs(|g| &g.a),
                    center_hz_mean: vecs(|g| &g.f_hz),
                    erb_hz_mean: vecs(|g| &g.erb_hz),
                    per_trial,
                })
            }
            None => Err(Error::Experiment("no trials to summarize".into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    /// Regime names of the front-ends; two entries for fusion.
    pub regimes: Vec<String>,
    pub fusion: Option<Fusion>,
    pub preset: String,
    pub num_params: usize,
    pub repetitions: usize,
    pub base_seed: u64,
    pub dataset: DatasetInfo,
    pub removed_channels: Option<(usize, usize)>,
    pub ci_method: String,
    pub model_selection: String,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub summary: Summary,
    pub trials: Vec<TrialOutcome>,
    pub frontends: Vec<FrontendSummary>,
}

impl ExperimentReport {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// `mean ± ci95` in percent.
    pub fn headline(&self) -> String {
        let m = 100.0 * self.summary.mean;
        match self.summary.ci95 {
            Some(h) => format!("{m:.2} ± {:.2} %", 100.0 * h),
            None => format!("{m:.2} % (CI undefined, R = {})", self.summary.count),
        }
    }
}

/// Per-epoch progress callback: `(seed, record)`.
pub type Progress<'a> = &'a (dyn Fn(u64, &EpochRecord) + Sync);

/// Everything a trial needs beyond its seed.
struct Plan<'a> {
    name: String,
    regimes: Vec<(&'a Regime, &'a FrontendOptions)>,
    fusion: Option<Fusion>,
    stages: Vec<Stage>,
    locked: Vec<bool>,
    removed: Option<(usize, usize)>,
    base: &'a ExperimentSpec,
}

fn trial_dir(out: &Path, seed: u64) -> PathBuf {
    out.join("trials").join(format!("seed_{seed}"))
}

fn build_trial_system(plan: &Plan<'_>, classes: usize, rng: &mut TrialRng) -> Result<KwsSystem> {
    let mut fes = Vec::with_capacity(plan.regimes.len());
    for (regime, opts) in &plan.regimes {
        let mut fe = build_frontend(regime, opts, &mut rng.init)?;
        if let Some((a, b)) = plan.removed {
            fe.remove_channels(a, b)?;
        }
        fes.push(fe);
    }
    let mut sys = build_system(
        fes,
        plan.fusion.unwrap_or_default(),
        &plan.base.backend,
        classes,
        &mut rng.init,
    )?;
    sys.frontend_locked = plan.locked.clone();
    Ok(sys)
}

/// The trained system of trial `seed` of `spec`, restored from `out`.
pub fn load_trial(spec: &ExperimentSpec, classes: usize, out: &Path, seed: u64) -> Result<KwsSystem> {
    let plan = Plan {
        name: spec.name(),
        regimes: vec![(&spec.regime, &spec.frontend)],
        fusion: None,
        stages: spec.regime.stages(),
        locked: vec![false],
        removed: None,
        base: spec,
    };
    let mut sys = build_trial_system(&plan, classes, &mut TrialRng::new(seed))?;
    sys.load_named_tensors(&load_checkpoint(trial_dir(out, seed).join("model.ckpt"))?)?;
    Ok(sys)
}

fn run_trial(plan: &Plan<'_>, data: &ExperimentData, seed: u64, out: &Path, progress: Progress<'_>) -> Result<()> {
    let classes = data.labels.num_classes();
    let mut rng = TrialRng::new(seed);
    let mut sys = build_trial_system(plan, classes, &mut rng)?;
    let train_data = TrainData {
        train: data.select(SplitName::Train),
        validation: data.select(SplitName::Validation),
        noise: &data.noise,
    };
    let history = train(&mut sys, &train_data, &plan.stages, &plan.base.train, &mut rng, |r| progress(seed, r))?;
    let test = data.select(SplitName::Test);
    let eval = evaluate(&mut sys, &test, classes, plan.base.train.batch_size)?;
    let dir = trial_dir(out, seed);
    fs::create_dir_all(&dir)?;
    save_checkpoint(dir.join("model.ckpt"), &sys.named_tensors())?;
    history.write_csv(fs::File::create(dir.join("history.csv"))?)?;
    let last = history.records.last();
    let outcome = TrialOutcome {
        seed,
        test_accuracy: eval.accuracy,
        confusion: eval.confusion,
        final_train_loss: last.map_or(f64::NAN, |r| r.train_loss),
        final_val_accuracy: last.and_then(|r| r.val_accuracy),
        frontends: sys.frontends.iter().map(LearnedFrontend::from_frontend).collect(),
    };
    fs::write(dir.join("trial.json"), serde_json::to_vec(&outcome)?)?;
    Ok(())
}

fn run_plan(plan: &Plan<'_>, data: &ExperimentData, out: &Path, progress: Progress<'_>) -> Result<ExperimentReport> {
    let spec = plan.base;
    if spec.repetitions == 0 {
        return Err(Error::Experiment("repetitions must be at least 1".into()));
    }
    for split in [SplitName::Train, SplitName::Test] {
        if data.split.get(split).is_empty() {
            return Err(Error::Experiment(format!("{} split is empty", split.as_str())));
        }
    }
    fs::create_dir_all(out)?;
    let seeds: Vec<u64> = spec.seeds().collect();
    seeds
        .par_iter()
        .map(|&seed| {
            run_trial(plan, data, seed, out, progress).map_err(|e| Error::Trial {
                seed,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<()>>>()?;

    let mut trials = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let path = trial_dir(out, seed).join("trial.json");
        trials.push(serde_json::from_slice::<TrialOutcome>(&fs::read(&path)?)?);
    }
    let accuracies: Vec<f64> = trials.iter().map(|t| t.test_accuracy).collect();
    let frontends = (0..plan.regimes.len())
        .map(|i| FrontendSummary::from_learned(&trials.iter().map(|t| &t.frontends[i]).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    let num_params = {
        let mut rng = TrialRng::new(spec.base_seed);
        build_trial_system(plan, data.labels.num_classes(), &mut rng)?.num_params()
    };
    let report = ExperimentReport {
        name: plan.name.clone(),
        regimes: plan.regimes.iter().map(|(r, _)| r.to_string()).collect(),
        fusion: plan.fusion,
        preset: spec.preset.clone(),
        num_params,
        repetitions: spec.repetitions,
        base_seed: spec.base_seed,
        dataset: data.info(),
        removed_channels: plan.removed,
        ci_method: CI_METHOD.to_string(),
        model_selection: "final-epoch parameters; validation accuracy is recorded but not used for selection".into(),
        seeds,
        summary: summarize(&accuracies),
        accuracies,
        trials,
        frontends,
    };
    report.save(&out.join("report.json"))?;
    Ok(report)
}

/// Repeated trials of one regime, seeds `base_seed..base_seed + repetitions`.
pub fn run_experiment(
    spec: &ExperimentSpec,
    data: &ExperimentData,
    out: &Path,
    progress: Progress<'_>,
) -> Result<ExperimentReport> {
    let plan = Plan {
        name: spec.name(),
        regimes: vec![(&spec.regime, &spec.frontend)],
        fusion: None,
        stages: spec.regime.stages(),
        locked: vec![false],
        removed: None,
        base: spec,
    };
    run_plan(&plan, data, out, progress)
}

/// Joins the front-ends of two single-stage regimes; training settings, preset and seeds come from `a`.
///
/// Each front-end keeps its own trainability. Both regimes must train for the same number of epochs.
pub fn run_fusion(
    a: &ExperimentSpec,
    b: &ExperimentSpec,
    fusion: Fusion,
    data: &ExperimentData,
    out: &Path,
    progress: Progress<'_>,
) -> Result<ExperimentReport> {
    let (sa, sb) = (a.regime.stages(), b.regime.stages());
    if sa.len() != 1 || sb.len() != 1 {
        return Err(Error::Experiment(format!(
            "fusion takes single-stage regimes, got {} and {}",
            a.name(),
            b.name()
        )));
    }
    let (sa, sb) = (sa[0], sb[0]);
    if sa.epochs != sb.epochs {
        return Err(Error::Experiment(format!(
            "fused regimes train for different epoch counts ({} vs {})",
            sa.epochs, sb.epochs
        )));
    }
    let plan = Plan {
        name: format!("{} & {}", a.name(), b.name()),
        regimes: vec![(&a.regime, &a.frontend), (&b.regime, &b.frontend)],
        fusion: Some(fusion),
        stages: vec![Stage {
            frontend_trainable: sa.frontend_trainable || sb.frontend_trainable,
            backend_trainable: sa.backend_trainable || sb.backend_trainable,
            epochs: sa.epochs,
        }],
        locked: vec![!sa.frontend_trainable, !sb.frontend_trainable],
        removed: None,
        base: a,
    };
    run_plan(&plan, data, out, progress)
}

/// One point of the removal sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemovalPoint {
    /// 1-based inclusive channel range; `None` removes nothing.
    pub range: Option<(usize, usize)>,
    /// Center frequencies of the first and last removed channel.
    pub center_hz: Option<(f64, f64)>,
    pub accuracies: Vec<f64>,
    pub summary: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemovalReport {
    pub name: String,
    pub num_channels: usize,
    pub ci_method: String,
    pub points: Vec<RemovalPoint>,
}

impl RemovalReport {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

/// Parses `a:b,c:d`; `none` (or an empty item) stands for the empty range.
pub fn parse_ranges(s: &str) -> Result<Vec<Option<(usize, usize)>>> {
    let mut out = Vec::new();
    let mut pos = 0;
    for item in s.split(',') {
        let t = item.trim();
        if t.is_empty() || t == "none" {
            out.push(None);
        } else {
            let bad = |msg: &str| Error::Parse {
                pos,
                msg: format!("{msg} in range {t:?}"),
            };
            let (a, b) = t.split_once(':').ok_or_else(|| bad("expected first:last"))?;
            let a: usize = a.trim().parse().map_err(|_| bad("bad first channel"))?;
            let b: usize = b.trim().parse().map_err(|_| bad("bad last channel"))?;
            if a == 0 || a > b {
                return Err(bad("need 1 <= first <= last"));
            }
            out.push(Some((a, b)));
        }
        pos += item.len() + 1;
    }
    Ok(out)
}

/// Channel centers of the initial front-end of `spec`.
pub fn initial_center_freqs(spec: &ExperimentSpec) -> Result<Vec<f64>> {
    let mut rng = TrialRng::new(spec.base_seed);
    Ok(build_frontend(&spec.regime, &spec.frontend, &mut rng.init)?.center_freqs())
}

/// Runs the repeated-trial protocol once per channel range of a fixed front-end.
///
/// Removed channels are zeroed, so every point keeps the same back-end input shape.
pub fn run_filter_removal(
    spec: &ExperimentSpec,
    ranges: &[Option<(usize, usize)>],
    data: &ExperimentData,
    out: &Path,
    progress: Progress<'_>,
) -> Result<RemovalReport> {
    if !spec.regime.frontend_fixed() {
        return Err(Error::Experiment(format!(
            "filter removal needs a fixed front-end, {} trains it",
            spec.name()
        )));
    }
    let k = spec.frontend.num_channels;
    if let Some((a, b)) = ranges.iter().flatten().find(|(a, b)| *a == 0 || a > b || *b > k) {
        return Err(Error::Experiment(format!("channel range {a}:{b} outside 1..={k}")));
    }
    let centers = initial_center_freqs(spec)?;
    fs::create_dir_all(out)?;
    let mut points = Vec::with_capacity(ranges.len());
    for &range in ranges {
        let sub = match range {
            Some((a, b)) => out.join(format!("range_{a}-{b}")),
            None => out.join("range_none"),
        };
        let plan = Plan {
            name: spec.name(),
            regimes: vec![(&spec.regime, &spec.frontend)],
            fusion: None,
            stages: spec.regime.stages(),
            locked: vec![false],
            removed: range,
            base: spec,
        };
        let report = run_plan(&plan, data, &sub, progress)?;
        points.push(RemovalPoint {
            range,
            center_hz: range.map(|(a, b)| (centers[a - 1], centers[b - 1])),
            accuracies: report.accuracies,
            summary: report.summary,
        });
    }
    let report = RemovalReport {
        name: spec.name(),
        num_channels: k,
        ci_method: CI_METHOD.to_string(),
        points,
    };
    report.save(&out.join("removal.json"))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::make_mel_filterbank;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ranges_parse() {
        assert_eq!(
            parse_ranges("none,20:26, 1:40").unwrap(),
            vec![None, Some((20, 26)), Some((1, 40))]
        );
        assert!(matches!(parse_ranges("1:2,5-6"), Err(Error::Parse { pos: 4, .. })));
        assert!(parse_ranges("0:3").is_err());
        assert!(parse_ranges("7:3").is_err());
    }

    #[test]
    fn removal_centers_match_the_reported_band() {
        let spec = ExperimentSpec::new("FfBt_26", "small").unwrap();
        let c = initial_center_freqs(&spec).unwrap();
        assert!((c[19] - 1626.0).abs() < 1.0, "{}", c[19]);
        assert!((c[25] - 2564.0).abs() < 1.0, "{}", c[25]);
    }

    #[test]
    fn untrained_mel_summary_is_the_mel_filterbank() {
        let spec = ExperimentSpec::new("FfBt_26", "small").unwrap();
        let fe = build_frontend(&spec.regime, &spec.frontend, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let l = LearnedFrontend::from_frontend(&fe);
        let FrontendSummary::Matrix { mean_weights, .. } = FrontendSummary::from_learned(&[&l, &l]).unwrap() else {
            panic!("expected matrix summary");
        };
        let mel = make_mel_filterbank(241, 40, 16000.0, 0.0, 8000.0).unwrap();
        let flat: Vec<f64> = mean_weights.concat();
        assert_eq!(flat.as_slice(), mel.weights.data());
    }

    #[test]
    fn fused_stem_has_more_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = ExperimentSpec::new("FfBt_26", "small").unwrap();
        let fe = build_frontend(&spec.regime, &spec.frontend, &mut rng).unwrap();
        let one = build_system(vec![fe.clone()], Fusion::Stack, &spec.backend, 4, &mut rng).unwrap();
        let two = build_system(vec![fe.clone(), fe], Fusion::Stack, &spec.backend, 4, &mut rng).unwrap();
        assert!(two.backend.num_params() > one.backend.num_params());
    }

    #[test]
    fn gammatone_regime_zeroes_chirp() {
        let spec = ExperimentSpec::new("GT[t]_Ic-Mel", "small").unwrap();
        let Frontend::Gammachirp(g) = build_frontend(&spec.regime, &spec.frontend, &mut ChaCha8Rng::seed_from_u64(0)).unwrap() else {
            panic!("expected gammachirp front-end");
        };
        assert_eq!(g.params.effective().c, 0.0);
        assert!(g.params.chirp_locked);
    }
}
