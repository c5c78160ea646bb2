//! Finite-difference check of the whole pipeline: front-end, back-end and loss.
//!
//! Every entry is compared at the configured step. Failing entries are re-differenced at
//! steps 10, 100 and 1000 times smaller, with the number of relu sides and argmax
//! positions that differ between `x + h` and `x - h` at each step. That second pass is
//! diagnostic only and never turns a failure into a pass.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_frontend, build_system, FrontendOptions, Regime};
use crate::autodiff::{relative_error, GradCheckConfig, NormMode, Tape, Tensor};
use crate::backend::{Fusion, KwsSystem, ResNetConfig};
use crate::data::{synth, KEYWORDS};
use crate::error::{Error, Result};
use crate::frontends::Frontend;

/// Step divisors of the diagnostic re-differencing.
const SMALLER_STEPS: [f64; 3] = [10.0, 100.0, 1000.0];

/// One probed scalar: `(parameter index in params_mut order, flat element index)`.
struct Probe {
    param: usize,
    index: usize,
    label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinedCheck {
    pub step: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub branch_switches: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub label: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub passed: bool,
    /// Relu sides and argmax positions that differ between `x + h` and `x - h`.
    pub branch_switches: usize,
    /// Comparisons at smaller steps, for failing entries.
    pub smaller_steps: Vec<RefinedCheck>,
}

impl ProbeResult {
    /// The difference converges on the analytic value once the step shrinks, without
    /// crossing a branch: the failure is truncation or kink error of the difference.
    pub fn converges(&self, tolerance: f64) -> bool {
        self.smaller_steps.iter().any(|r| r.branch_switches == 0 && r.rel_error <= tolerance)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineCheck {
    pub step: f64,
    pub tolerance: f64,
    pub matrix: Vec<ProbeResult>,
    pub gammachirp: Vec<ProbeResult>,
}

impl PipelineCheck {
    pub fn all(&self) -> impl Iterator<Item = &ProbeResult> {
        self.matrix.iter().chain(&self.gammachirp)
    }

    /// Every entry agreed at the configured step.
    pub fn passed(&self) -> bool {
        self.all().all(|p| p.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ProbeResult> {
        self.all().filter(|p| !p.passed)
    }

    /// Every failing entry agrees with its analytic value at some smaller step.
    pub fn failures_converge(&self) -> bool {
        self.failures().all(|p| p.converges(self.tolerance))
    }

    pub fn max_rel_error(&self) -> f64 {
        self.all().map(|p| p.rel_error).fold(0.0, f64::max)
    }
}

fn loss_and_pattern(sys: &KwsSystem, inputs: &[Tensor], labels: &[usize]) -> Result<(f64, Vec<u64>)> {
    let mut s = sys.clone();
    let mut tape = Tape::new();
    let logits = s.forward(&mut tape, inputs, NormMode::Train)?;
    let loss = tape.softmax_cross_entropy(logits, labels)?;
    Ok((tape.value(loss).item(), tape.branch_pattern()))
}

fn switches(a: &[u64], b: &[u64]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len())
}

fn check_probes(
    sys: &KwsSystem,
    clips: &[Vec<f64>],
    labels: &[usize],
    probes: &[Probe],
    cfg: &GradCheckConfig,
) -> Result<Vec<ProbeResult>> {
    let inputs = sys.prepare(clips)?;
    let mut s = sys.clone();
    s.set_trainable(true, true);
    let mut tape = Tape::new();
    let logits = s.forward(&mut tape, &inputs, NormMode::Train)?;
    let loss = tape.softmax_cross_entropy(logits, labels)?;
    tape.backward(loss)?;
    let params = s.params_mut();
    let mut analytic = Vec::with_capacity(probes.len());
    for p in probes {
        let g = params[p.param]
            .grad(&tape)
            .ok_or_else(|| Error::Experiment(format!("{} received no gradient", p.label)))?;
        analytic.push(g.data()[p.index]);
    }

    let central = |p: &Probe, h: f64| -> Result<(f64, usize)> {
        let eval = |delta: f64| {
            let mut s = sys.clone();
            s.params_mut()[p.param].value.data_mut()[p.index] += delta;
            loss_and_pattern(&s, &inputs, labels)
        };
        let (fp, pp) = eval(h)?;
        let (fm, pm) = eval(-h)?;
        Ok(((fp - fm) / (2.0 * h), switches(&pp, &pm)))
    };

    let mut out = Vec::with_capacity(probes.len());
    for (p, &a) in probes.iter().zip(&analytic) {
        let (numeric, branch_switches) = central(p, cfg.step)?;
        let rel_error = relative_error(a, numeric, cfg.abs_floor);
        let passed = rel_error <= cfg.tolerance;
        let mut smaller_steps = Vec::new();
        if !passed {
            for div in SMALLER_STEPS {
                let h = cfg.step / div;
                let (n, sw) = central(p, h)?;
                smaller_steps.push(RefinedCheck {
                    step: h,
                    numeric: n,
                    rel_error: relative_error(a, n, cfg.abs_floor),
                    branch_switches: sw,
                });
            }
        }
        out.push(ProbeResult {
            label: p.label.clone(),
            analytic: a,
            numeric,
            rel_error,
            passed,
            branch_switches,
            smaller_steps,
        });
    }
    Ok(out)
}

/// Gradients of the training loss on a batch of 4 synthetic clips with a 2-block small
/// back-end, for a 10 x 5 slice of the matrix front-end and for the gammachirp scalars
/// plus 5 sampled `(gain, center, erb)` triples.
pub fn pipeline_gradcheck(seed: u64, cfg: &GradCheckConfig) -> Result<PipelineCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = vec![0, 1, 2, 3];
    let clips: Vec<Vec<f64>> = labels
        .iter()
        .map(|&l| {
            let pitch = rng.random_range(0.85..1.15);
            synth::utterance(KEYWORDS[l], pitch, &mut rng).iter().map(|&v| v as f64).collect()
        })
        .collect();
    let backend = ResNetConfig {
        n_res_blocks: 2,
        ..ResNetConfig::small()
    };
    let opts = FrontendOptions::default();

    // Keep every weight off the relu kink so the slice is differentiable.
    let mut fe = build_frontend(&Regime::parse("FtBt_1")?, &opts, &mut rng)?;
    if let Frontend::Matrix(m) = &mut fe {
        for w in m.weights.value.data_mut() {
            *w += rng.random_range(0.01..0.05);
        }
    }
    let k = fe.num_channels();
    let sys = build_system(vec![fe], Fusion::Stack, &backend, 4, &mut rng)?;
    let mut probes = Vec::new();
    for bin in 60..70 {
        for ch in 20..25 {
            probes.push(Probe {
                param: 0,
                index: bin * k + ch,
                label: format!("W[{bin},{ch}]"),
            });
        }
    }
    let matrix = check_probes(&sys, &clips, &labels, &probes, cfg)?;

    let fe = build_frontend(&Regime::parse("GC[t]_Ic-Mel_1")?, &opts, &mut rng)?;
    let sys = build_system(vec![fe], Fusion::Stack, &backend, 4, &mut rng)?;
    let mut probes = vec![
        Probe { param: 1, index: 0, label: "n".into() },
        Probe { param: 2, index: 0, label: "b".into() },
        Probe { param: 3, index: 0, label: "c".into() },
    ];
    let mut channels = sample(&mut rng, k, 5).into_vec();
    channels.sort_unstable();
    for ch in channels {
        for (param, name) in [(0, "gain"), (4, "center"), (5, "erb")] {
            probes.push(Probe {
                param,
                index: ch,
                label: format!("{name}[{ch}]"),
            });
        }
    }
    let gammachirp = check_probes(&sys, &clips, &labels, &probes, cfg)?;
    Ok(PipelineCheck {
        step: cfg.step,
        tolerance: cfg.tolerance,
        matrix,
        gammachirp,
    })
}
