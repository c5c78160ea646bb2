use std::fs;

use fbkws_core::backend::{evaluate, Fusion, TrialRng};
use fbkws_core::data::{split_by_speaker, synth, AudioClip, AugmentConfig, NoisePool, SplitName, SubsetSpec};
use fbkws_core::experiments::{
    build_frontend, build_system, emit_plots, load_trial, run_experiment, run_filter_removal, run_fusion, ExperimentData,
    ExperimentSpec, FrontendSummary, DEFAULT_SPLIT,
};
use fbkws_core::autodiff::{NormMode, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn toy_data() -> ExperimentData {
    let subset: SubsetSpec = "2kw".parse().unwrap();
    let labels = subset.label_map();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut clips = Vec::new();
    for s in 0..10 {
        for (label, w) in ["yes", "no"].iter().enumerate() {
            clips.push(AudioClip {
                samples: synth::utterance(w, 0.9 + 0.02 * s as f64, &mut rng),
                sample_rate: 16000,
                label,
                speaker_id: format!("spk{s}"),
                rel_path: format!("{w}/spk{s}_nohash_0.wav"),
            });
        }
    }
    let split = split_by_speaker(&clips, DEFAULT_SPLIT, 0).unwrap();
    ExperimentData {
        clips,
        split,
        labels,
        noise: NoisePool::default(),
        subset: Some(subset.to_string()),
    }
}

fn quick(name: &str, reps: usize) -> ExperimentSpec {
    let mut spec = ExperimentSpec::new(name, "small").unwrap();
    spec.repetitions = reps;
    spec.base_seed = 7;
    spec.train.batch_size = 8;
    spec.train.augment = AugmentConfig::disabled();
    spec.frontend.kernel_length = 256;
    spec
}

fn silent() -> impl Fn(u64, &fbkws_core::backend::EpochRecord) + Sync {
    |_, _| {}
}

#[test]
fn experiment_writes_trials_and_report() {
    let data = toy_data();
    let dir = tempfile::tempdir().unwrap();
    let spec = quick("FfBt_1", 2);
    let report = run_experiment(&spec, &data, dir.path(), &silent()).unwrap();
    assert_eq!(report.seeds, vec![7, 8]);
    assert_eq!(report.accuracies.len(), 2);
    let mean = (report.accuracies[0] + report.accuracies[1]) / 2.0;
    assert_eq!(report.summary.mean.to_bits(), mean.to_bits());
    assert!(report.summary.ci95.unwrap().is_finite());
    for seed in [7, 8] {
        let t = dir.path().join(format!("trials/seed_{seed}"));
        assert!(t.join("model.ckpt").is_file());
        let hist = fs::read_to_string(t.join("history.csv")).unwrap();
        assert_eq!(hist.lines().next().unwrap(), "epoch,train_loss,val_accuracy,train_accuracy");
        assert_eq!(hist.lines().count(), 2);
    }
    let back = fbkws_core::experiments::ExperimentReport::load(&dir.path().join("report.json")).unwrap();
    assert_eq!(back, report);

    // a restored trial scores exactly what the report says
    let mut sys = load_trial(&spec, 2, dir.path(), 8).unwrap();
    let test = data.select(SplitName::Test);
    let acc = evaluate(&mut sys, &test, 2, 8).unwrap().accuracy;
    assert_eq!(acc.to_bits(), report.accuracies[1].to_bits());

    let (a, b) = (dir.path().join("plots_a"), dir.path().join("plots_b"));
    let pa = emit_plots(&report, &a).unwrap();
    let pb = emit_plots(&report, &b).unwrap();
    assert_eq!(pa.len(), pb.len());
    for (x, y) in pa.iter().zip(&pb) {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
    }
    let fb = fs::read_to_string(a.join("filterbank.csv")).unwrap();
    assert_eq!(fb.lines().count(), 1 + 241);
}

#[test]
fn single_repetition_has_undefined_ci() {
    let data = toy_data();
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&quick("FfBt_1", 1), &data, dir.path(), &silent()).unwrap();
    assert_eq!(report.summary.ci95, None);
    assert_eq!(report.summary.mean, report.accuracies[0]);
}

#[test]
fn gammachirp_report_has_parameter_table() {
    let data = toy_data();
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&quick("GC[t]_Ir-Linear_1", 2), &data, dir.path(), &silent()).unwrap();
    let FrontendSummary::Gammachirp { n, per_trial, .. } = &report.frontends[0] else {
        panic!("expected gammachirp summary");
    };
    assert_eq!(per_trial.len(), 2);
    assert!(n.ci95.is_some());
    let files = emit_plots(&report, &dir.path().join("plots")).unwrap();
    let csv = files.iter().find(|p| p.ends_with("gc_params.csv")).unwrap();
    assert_eq!(fs::read_to_string(csv).unwrap().lines().count(), 1 + 40);
}

#[test]
fn empty_removal_is_bit_exact_to_baseline() {
    let data = toy_data();
    let dir = tempfile::tempdir().unwrap();
    let spec = quick("FfBt_1", 2);
    let base = run_experiment(&spec, &data, &dir.path().join("base"), &silent()).unwrap();
    let sweep = run_filter_removal(&spec, &[None, Some((20, 26))], &data, &dir.path().join("rm"), &silent()).unwrap();
    let none = &sweep.points[0];
    assert_eq!(none.accuracies.len(), base.accuracies.len());
    for (a, b) in none.accuracies.iter().zip(&base.accuracies) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    for seed in [7, 8] {
        let a = fs::read(dir.path().join(format!("base/trials/seed_{seed}/model.ckpt"))).unwrap();
        let b = fs::read(dir.path().join(format!("rm/range_none/trials/seed_{seed}/model.ckpt"))).unwrap();
        assert_eq!(a, b);
    }
    let (lo, hi) = sweep.points[1].center_hz.unwrap();
    assert!((lo - 1626.0).abs() < 1.0 && (hi - 2564.0).abs() < 1.0);
    assert!(run_filter_removal(&spec, &[Some((39, 41))], &data, &dir.path().join("bad"), &silent()).is_err());
    assert!(run_filter_removal(&quick("FtBt_1", 1), &[None], &data, &dir.path().join("bad2"), &silent()).is_err());
}

#[test]
fn self_fusion_channels_are_identical() {
    let spec = quick("FfBt_1", 1);
    let mut rng = TrialRng::new(0);
    let fe = build_frontend(&spec.regime, &spec.frontend, &mut rng.init).unwrap();
    let mut sys = build_system(vec![fe.clone(), fe], Fusion::Stack, &spec.backend, 2, &mut rng.init).unwrap();
    let data = toy_data();
    let waves: Vec<Vec<f64>> = data.clips[..3].iter().map(|c| c.samples_f64()).collect();
    let inputs = sys.prepare(&waves).unwrap();
    let mut tape = Tape::new();
    let x = sys.features(&mut tape, &inputs, NormMode::Train).unwrap();
    let v = tape.value(x);
    assert_eq!(v.shape(), &[3, 2, 98, 40]);
    let per = 98 * 40;
    for b in 0..3 {
        let base = b * 2 * per;
        assert_eq!(v.data()[base..base + per], v.data()[base + per..base + 2 * per]);
    }
}

#[test]
fn fusion_runs_and_respects_epoch_rules() {
    let data = toy_data();
    let dir = tempfile::tempdir().unwrap();
    let a = quick("FfBt_1", 1);
    let b = quick("GC[t]_Ic-Linear_1", 1);
    let report = run_fusion(&a, &b, Fusion::Stack, &data, dir.path(), &silent()).unwrap();
    assert_eq!(report.frontends.len(), 2);
    assert_eq!(report.regimes, vec!["FfBt_1".to_string(), "GC[t]_Ic-Linear_1".to_string()]);
    // The fixed log-Mel front-end stays at its initial filterbank.
    let FrontendSummary::Matrix { mean_weights, .. } = &report.frontends[0] else {
        panic!("expected matrix summary");
    };
    let mel = fbkws_core::dsp::make_mel_filterbank(241, 40, 16000.0, 0.0, 8000.0).unwrap();
    assert_eq!(mean_weights.concat().as_slice(), mel.weights.data());
    let c = quick("GC[t]_Ic-Linear_2", 1);
    assert!(run_fusion(&a, &c, Fusion::Stack, &data, &dir.path().join("x"), &silent()).is_err());
    assert!(run_fusion(&quick("FfBt_1 + FtBf_1", 1), &b, Fusion::Stack, &data, &dir.path().join("y"), &silent()).is_err());
}
