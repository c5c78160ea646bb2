//! Learnable front-ends mapping a batch of clips to `[B, T, K]` log filterbank energies.
//!
//! [`FilterbankMatrix`] weights a power spectrogram with `relu(W)`; [`GammachirpFrontend`]
//! filters the waveform with parametric gammachirp kernels and takes per-frame energies.
//! Both clamp at [`ETA`] before the logarithm, so pre-normalization features are never
//! below −50, and both end in a per-channel batch normalization without affine terms.

mod gammachirp;
mod matrix;

pub use gammachirp::{
    gammatone_reference, init_gammachirp, write_kernels_csv, CochleagramMode, EffectiveGammachirp,
    GammachirpFrontend, GammachirpParams, ImpulseNorm, ParamInit, DEFAULT_KERNEL_LENGTH,
};
pub use matrix::FilterbankMatrix;

use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchNormState, NormMode, Parameter, Tape, Tensor, Var};
use crate::dsp::{FilterbankScale, MelScale};
use crate::error::{Error, Result};

/// Log-compression floor `e^-50`.
pub const ETA: f64 = 1.9287498479639178e-22;

/// Frequency spacing of the initial filters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitScale {
    Mel,
    Linear,
}

impl InitScale {
    pub fn filterbank_scale(self) -> FilterbankScale {
        match self {
            InitScale::Mel => FilterbankScale::Mel(MelScale::Slaney),
            InitScale::Linear => FilterbankScale::Linear,
        }
    }
}

/// `log(max(x, eta))`.
pub fn log_compress(tape: &mut Tape, x: Var, eta: f64) -> Result<Var> {
    let c = tape.max_scalar(x, eta)?;
    tape.log(c)
}

/// Zeroes removed channels of `x: [.., K]`; a no-op (no tape node) when none are removed.
pub fn mask_channels(tape: &mut Tape, x: Var, removed: &[bool]) -> Result<Var> {
    if !removed.iter().any(|&r| r) {
        return Ok(x);
    }
    let k = *tape.shape(x).last().unwrap_or(&0);
    if k != removed.len() {
        return Err(Error::ShapeMismatch {
            op: "mask_channels",
            lhs: tape.shape(x).to_vec(),
            rhs: vec![removed.len()],
        });
    }
    let keep = tape.constant(Tensor::from_vec(removed.iter().map(|&r| if r { 0.0 } else { 1.0 }).collect()));
    tape.mul(x, keep)
}

/// Batch normalization of `[B, T, K]` features per channel `K`, over batch and time.
pub fn apply_feature_norm(tape: &mut Tape, x: Var, state: &mut BatchNormState, mode: NormMode) -> Result<Var> {
    let axis = tape.shape(x).len().saturating_sub(1);
    tape.batch_norm(x, axis, state, mode)
}

/// Either front-end, plus its feature normalization and channel-removal mask.
#[derive(Clone, Debug)]
pub enum Frontend {
    Matrix(FilterbankMatrix),
    Gammachirp(GammachirpFrontend),
}

impl Frontend {
    pub fn num_channels(&self) -> usize {
        match self {
            Frontend::Matrix(m) => m.num_channels(),
            Frontend::Gammachirp(g) => g.num_channels(),
        }
    }

    /// Frames per clip of `len` samples.
    pub fn num_frames(&self, len: usize) -> Option<usize> {
        match self {
            Frontend::Matrix(m) => m.framing.num_frames(len),
            Frontend::Gammachirp(g) => g.framing.num_frames(len),
        }
    }

    /// Non-learnable preprocessing of a batch: spectrograms for the matrix front-end,
    /// stacked waveforms `[B, L]` for the gammachirp one.
    pub fn prepare(&self, clips: &[Vec<f64>]) -> Result<Tensor> {
        match self {
            Frontend::Matrix(m) => m.prepare(clips),
            Frontend::Gammachirp(_) => stack_waveforms(clips),
        }
    }

    /// Features before batch normalization.
    pub fn forward_raw(&mut self, tape: &mut Tape, input: Var) -> Result<Var> {
        match self {
            Frontend::Matrix(m) => m.forward(tape, input),
            Frontend::Gammachirp(g) => g.forward(tape, input),
        }
    }

    pub fn forward(&mut self, tape: &mut Tape, input: Var, mode: NormMode) -> Result<Var> {
        let raw = self.forward_raw(tape, input)?;
        apply_feature_norm(tape, raw, self.norm_mut(), mode)
    }

    pub fn norm(&self) -> &BatchNormState {
        match self {
            Frontend::Matrix(m) => &m.norm,
            Frontend::Gammachirp(g) => &g.norm,
        }
    }

    pub fn norm_mut(&mut self) -> &mut BatchNormState {
        match self {
            Frontend::Matrix(m) => &mut m.norm,
            Frontend::Gammachirp(g) => &mut g.norm,
        }
    }

    pub fn params(&self) -> Vec<&Parameter> {
        match self {
            Frontend::Matrix(m) => vec![&m.weights],
            Frontend::Gammachirp(g) => g.params.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            Frontend::Matrix(m) => vec![&mut m.weights],
            Frontend::Gammachirp(g) => g.params.params_mut(),
        }
    }

    /// Enables or freezes learning; a gammatone chirp stays frozen regardless.
    pub fn set_trainable(&mut self, on: bool) {
        match self {
            Frontend::Matrix(m) => m.weights.trainable = on,
            Frontend::Gammachirp(g) => g.params.set_trainable(on),
        }
    }

    pub fn removed(&self) -> &[bool] {
        match self {
            Frontend::Matrix(m) => &m.removed,
            Frontend::Gammachirp(g) => &g.removed,
        }
    }

    /// Marks channels `first..=last` (1-based) as removed.
    pub fn remove_channels(&mut self, first: usize, last: usize) -> Result<()> {
        let k = self.num_channels();
        if first == 0 || first > last || last > k {
            return Err(Error::Experiment(format!(
                "channel range {first}:{last} outside 1..={k}"
            )));
        }
        let removed = match self {
            Frontend::Matrix(m) => &mut m.removed,
            Frontend::Gammachirp(g) => &mut g.removed,
        };
        removed[first - 1..last].iter_mut().for_each(|r| *r = true);
        Ok(())
    }

    /// Apex frequency of each channel in Hz.
    pub fn center_freqs(&self) -> Vec<f64> {
        match self {
            Frontend::Matrix(m) => m.center_freqs.clone(),
            Frontend::Gammachirp(g) => g.params.effective().f_hz,
        }
    }
}

/// Stacks equal-length waveforms into `[B, L]`.
pub fn stack_waveforms(clips: &[Vec<f64>]) -> Result<Tensor> {
    let l = clips.first().map_or(0, Vec::len);
    if clips.iter().any(|c| c.len() != l) {
        return Err(Error::InvalidShape {
            op: "stack_waveforms",
            shape: clips.iter().map(Vec::len).collect(),
            reason: "clips in a batch must share one length".into(),
        });
    }
    Tensor::new(vec![clips.len(), l], clips.concat())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eta_is_e_to_minus_50() {
        assert_eq!(ETA, (-50f64).exp());
        assert_eq!(ETA.ln(), -50.0);
    }
}
