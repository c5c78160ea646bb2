//! Parametric gammachirp filterbank on the raw waveform.
//!
//! Channel `k` has impulse response
//! `a_k t^(n-1) exp(-2 pi b ERB_k t) cos(2 pi f_k t + c ln t)`, sampled at
//! `t = (i + 1) / f_s` so that `ln t` stays finite. Raw parameters are mapped to valid
//! values on every forward pass: `a, b, f, ERB` through `relu`, `n` through `max(., 1)`.
//! Center frequencies and bandwidths are stored divided by `f_s / 2`.

use std::f64::consts::PI;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchNormState, ConvMode, FrameEnergySpec, Parameter, Tape, Tensor, Var};
use crate::dsp::{erb, FramingConfig, Window};
use crate::error::{Error, Result};

use super::{log_compress, mask_channels, InitScale, ETA};

/// 128 ms at 16 kHz.
pub const DEFAULT_KERNEL_LENGTH: usize = 2048;

/// How frame energies are taken from each filtered channel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CochleagramMode {
    /// `M * sum x^2` over a rectangular frame.
    #[default]
    ParsevalRect,
    /// As above with a Hann window applied to the frame first.
    ParsevalHann,
    /// `M * max |x|^2`.
    MaxPool,
}

impl FromStr for CochleagramMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parseval_rect" | "rect" => Ok(Self::ParsevalRect),
            "parseval_hann" | "hann" => Ok(Self::ParsevalHann),
            "maxpool" => Ok(Self::MaxPool),
            _ => Err(Error::Parse {
                pos: 0,
                msg: format!("unknown cochleagram mode {s:?} (parseval_rect, parseval_hann, maxpool)"),
            }),
        }
    }
}

impl CochleagramMode {
    pub fn energy_spec(self, framing: &FramingConfig) -> FrameEnergySpec {
        let m = framing.frame_length;
        let window = match self {
            CochleagramMode::ParsevalHann => Window::Hann,
            _ => Window::Rectangular,
        };
        FrameEnergySpec {
            frame_len: m,
            hop: framing.hop,
            window: window.coefficients(m),
            max_pool: self == CochleagramMode::MaxPool,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamInit {
    /// `n = 4, b = 1.019, c = -1`.
    Constant,
    /// `n ~ U(3, 5), b ~ U(0.8, 1.2), c ~ U(-2, 0)`.
    Random,
}

/// Scaling of each kernel before its gain.
#[derive(Clone, Debug, PartialEq)]
pub enum ImpulseNorm {
    /// Divide by the kernel's current peak magnitude on every forward pass.
    PerForward,
    /// Multiply by fixed per-channel factors (typically the peaks at initialization).
    Fixed(Vec<f64>),
}

#[derive(Clone, Debug)]
pub struct GammachirpParams {
    pub a: Parameter,
    pub n_raw: Parameter,
    pub b_raw: Parameter,
    pub c: Parameter,
    pub f_norm: Parameter,
    pub erb_norm: Parameter,
    pub kernel_length: usize,
    pub sample_rate: f64,
    pub normalization: ImpulseNorm,
    /// Keeps `c` at its current value (gammatone).
    pub chirp_locked: bool,
}

/// Constrained parameter values in physical units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveGammachirp {
    pub a: Vec<f64>,
    pub n: f64,
    pub b: f64,
    pub c: f64,
    pub f_hz: Vec<f64>,
    pub erb_hz: Vec<f64>,
}

impl GammachirpParams {
    pub fn num_channels(&self) -> usize {
        self.a.value.numel()
    }

    pub fn params(&self) -> Vec<&Parameter> {
        vec![&self.a, &self.n_raw, &self.b_raw, &self.c, &self.f_norm, &self.erb_norm]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![
            &mut self.a,
            &mut self.n_raw,
            &mut self.b_raw,
            &mut self.c,
            &mut self.f_norm,
            &mut self.erb_norm,
        ]
    }

    pub fn set_trainable(&mut self, on: bool) {
        let locked = self.chirp_locked;
        for p in self.params_mut() {
            p.trainable = on;
        }
        if locked {
            self.c.trainable = false;
        }
    }

    /// Forces `c = 0` and freezes it.
    pub fn make_gammatone(&mut self) {
        self.c.value = Tensor::scalar(0.0);
        self.c.trainable = false;
        self.chirp_locked = true;
    }

    pub fn effective(&self) -> EffectiveGammachirp {
        let half = self.sample_rate / 2.0;
        let relu = |v: f64| v.max(0.0);
        EffectiveGammachirp {
            a: self.a.value.data().iter().map(|&v| relu(v)).collect(),
            n: self.n_raw.value.item().max(1.0),
            b: relu(self.b_raw.value.item()),
            c: self.c.value.item(),
            f_hz: self.f_norm.value.data().iter().map(|&v| relu(v) * half).collect(),
            erb_hz: self.erb_norm.value.data().iter().map(|&v| relu(v) * half).collect(),
        }
    }

    /// Kernels `[K, kernel_length]` on `tape`, differentiable in every trainable field.
    pub fn impulse_responses(&mut self, tape: &mut Tape) -> Result<Var> {
        let vars = [
            tape.param(&mut self.a),
            tape.param(&mut self.n_raw),
            tape.param(&mut self.b_raw),
            tape.param(&mut self.c),
            tape.param(&mut self.f_norm),
            tape.param(&mut self.erb_norm),
        ];
        self.impulse_from_vars(tape, vars)
    }

    /// Kernels from raw parameters already on the tape, in [`Self::params`] order.
    pub fn impulse_from_vars(&self, tape: &mut Tape, vars: [Var; 6]) -> Result<Var> {
        let [a, n, b, c, f, e] = vars;
        let k = self.num_channels();
        let l = self.kernel_length;
        let fs = self.sample_rate;
        let half = fs / 2.0;
        let t: Vec<f64> = (1..=l).map(|i| i as f64 / fs).collect();
        let ln_t: Vec<f64> = t.iter().map(|v| v.ln()).collect();
        let t = tape.constant(Tensor::new(vec![1, l], t)?);
        let ln_t = tape.constant(Tensor::new(vec![1, l], ln_t)?);

        let a = tape.relu(a)?;
        let a = tape.reshape(a, &[k, 1])?;
        let n = tape.max_scalar(n, 1.0)?;
        let b = tape.relu(b)?;
        let f = tape.relu(f)?;
        let f = tape.mul_scalar(f, half)?;
        let f = tape.reshape(f, &[k, 1])?;
        let e = tape.relu(e)?;
        let e = tape.mul_scalar(e, half)?;
        let e = tape.reshape(e, &[k, 1])?;

        // t^(n-1) = exp((n-1) ln t), shared by all channels
        let nm1 = tape.add_scalar(n, -1.0)?;
        let p = tape.mul(nm1, ln_t)?;
        let envelope = tape.exp(p)?;
        let be = tape.mul(b, e)?;
        let bet = tape.mul(be, t)?;
        let arg = tape.mul_scalar(bet, -2.0 * PI)?;
        let decay = tape.exp(arg)?;
        let ft = tape.mul(f, t)?;
        let phase = tape.mul_scalar(ft, 2.0 * PI)?;
        let chirp = tape.mul(c, ln_t)?;
        let phase = tape.add(phase, chirp)?;
        let carrier = tape.cos(phase)?;
        let g = tape.mul(envelope, decay)?;
        let g = tape.mul(g, carrier)?;

        let g = match &self.normalization {
            ImpulseNorm::PerForward => {
                let peak = tape.row_max_abs(g)?;
                tape.div(g, peak)?
            }
            ImpulseNorm::Fixed(scale) => {
                let s = tape.constant(Tensor::new(vec![k, 1], scale.clone())?);
                tape.mul(g, s)?
            }
        };
        tape.mul(g, a)
    }

    /// Kernels as plain numbers.
    pub fn kernels(&self) -> Result<Tensor> {
        let mut p = self.clone();
        let mut tape = Tape::new();
        let g = p.impulse_responses(&mut tape)?;
        Ok(tape.value(g).clone())
    }

    /// Switches to fixed normalization using the current kernel peaks.
    pub fn freeze_normalization(&mut self) -> Result<()> {
        let k = self.num_channels();
        let mut raw = self.clone();
        raw.normalization = ImpulseNorm::Fixed(vec![1.0; k]);
        raw.a.value = Tensor::full(&[k], 1.0);
        let g = raw.kernels()?;
        let scale = g
            .data()
            .chunks(self.kernel_length)
            .map(|row| {
                let peak = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if peak > 0.0 {
                    1.0 / peak
                } else {
                    1.0
                }
            })
            .collect();
        self.normalization = ImpulseNorm::Fixed(scale);
        Ok(())
    }
}

/// Initial parameters for `k` channels spaced on `scale` over `(0, f_s / 2)`.
pub fn init_gammachirp<R: Rng + ?Sized>(
    scale: InitScale,
    init: ParamInit,
    k: usize,
    sample_rate: f64,
    rng: &mut R,
) -> Result<GammachirpParams> {
    if k == 0 {
        return Err(Error::Filterbank("gammachirp needs at least one channel".into()));
    }
    let half = sample_rate / 2.0;
    let edges = scale.filterbank_scale().edge_points(k, 0.0, half);
    let f_hz = &edges[1..=k];
    let (n, b, c) = match init {
        ParamInit::Constant => (4.0, 1.019, -1.0),
        ParamInit::Random => (
            rng.random_range(3.0..5.0),
            rng.random_range(0.8..1.2),
            rng.random_range(-2.0..0.0),
        ),
    };
    Ok(GammachirpParams {
        a: Parameter::new("frontend.gc.a", Tensor::full(&[k], 1.0)),
        n_raw: Parameter::new("frontend.gc.n", Tensor::scalar(n)),
        b_raw: Parameter::new("frontend.gc.b", Tensor::scalar(b)),
        c: Parameter::new("frontend.gc.c", Tensor::scalar(c)),
        f_norm: Parameter::new("frontend.gc.f", Tensor::from_vec(f_hz.iter().map(|f| f / half).collect())),
        erb_norm: Parameter::new(
            "frontend.gc.erb",
            Tensor::from_vec(f_hz.iter().map(|&f| erb(f) / half).collect()),
        ),
        kernel_length: DEFAULT_KERNEL_LENGTH,
        sample_rate,
        normalization: ImpulseNorm::PerForward,
        chirp_locked: false,
    })
}

/// Peak-normalized gammatone kernel evaluated directly, without the tape.
pub fn gammatone_reference(n: f64, b: f64, f_hz: f64, erb_hz: f64, gain: f64, len: usize, fs: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=len)
        .map(|i| {
            let t = i as f64 / fs;
            t.powf(n - 1.0) * (-2.0 * PI * b * erb_hz * t).exp() * (2.0 * PI * f_hz * t).cos()
        })
        .collect();
    let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    raw.iter().map(|v| gain * v / peak).collect()
}

/// Gammachirp filtering, frame energies and log compression of waveforms `[B, L]`.
#[derive(Clone, Debug)]
pub struct GammachirpFrontend {
    pub params: GammachirpParams,
    pub mode: CochleagramMode,
    pub framing: FramingConfig,
    /// Alignment of the filtered signal against the input; causal by default.
    pub alignment: ConvMode,
    pub eta: f64,
    pub removed: Vec<bool>,
    pub norm: BatchNormState,
}

impl GammachirpFrontend {
    pub fn new(params: GammachirpParams, mode: CochleagramMode) -> Self {
        let k = params.num_channels();
        Self {
            params,
            mode,
            framing: FramingConfig::default(),
            alignment: ConvMode::Causal,
            eta: ETA,
            removed: vec![false; k],
            norm: BatchNormState::new(k),
        }
    }

    pub fn num_channels(&self) -> usize {
        self.params.num_channels()
    }

    /// Pre-normalization features `[B, T, K]`.
    pub fn forward(&mut self, tape: &mut Tape, waves: Var) -> Result<Var> {
        let g = self.params.impulse_responses(tape)?;
        let spec = self.mode.energy_spec(&self.framing);
        let e = tape.conv_frame_energy(waves, g, self.alignment, &spec)?;
        let e = mask_channels(tape, e, &self.removed)?;
        log_compress(tape, e, self.eta)
    }

    /// One row per channel: `channel,gain,center_hz,erb_hz`.
    pub fn write_params_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let e = self.params.effective();
        writeln!(w, "channel,gain,center_hz,erb_hz")?;
        for k in 0..e.a.len() {
            writeln!(w, "{},{},{},{}", k + 1, e.a[k], e.f_hz[k], e.erb_hz[k])?;
        }
        Ok(())
    }
}

/// Kernel dump: one row per channel, one column per sample.
pub fn write_kernels_csv<W: Write>(w: W, params: &GammachirpParams) -> Result<()> {
    crate::dsp::write_matrix_csv(w, &params.kernels()?)
}
