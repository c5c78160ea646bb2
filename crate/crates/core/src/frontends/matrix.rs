//! Filterbank matrix applied to power spectrograms.

use std::io::Write;

use crate::autodiff::{BatchNormState, Parameter, Tape, Tensor, Var};
use crate::dsp::{power_spectrogram_batch, write_matrix_csv, FramingConfig, ReferenceFilterbank, Window};
use crate::error::{Error, Result};

use super::{log_compress, mask_channels, ETA};

/// `log(max(X relu(W), eta))` over a `[B, T, F]` power spectrogram batch.
#[derive(Clone, Debug)]
pub struct FilterbankMatrix {
    /// `F x K` raw weights; the effective filterbank is `relu(W)`.
    pub weights: Parameter,
    pub eta: f64,
    pub framing: FramingConfig,
    pub window: Window,
    pub removed: Vec<bool>,
    /// Apex frequencies of the initializing filterbank.
    pub center_freqs: Vec<f64>,
    pub norm: BatchNormState,
}

impl FilterbankMatrix {
    pub fn new(weights: Tensor, center_freqs: Vec<f64>) -> Result<Self> {
        if weights.rank() != 2 {
            return Err(Error::InvalidShape {
                op: "FilterbankMatrix::new",
                shape: weights.shape().to_vec(),
                reason: "expected F x K".into(),
            });
        }
        let k = weights.shape()[1];
        Ok(Self {
            weights: Parameter::new("frontend.w", weights),
            eta: ETA,
            framing: FramingConfig::default(),
            window: Window::Hann,
            removed: vec![false; k],
            center_freqs,
            norm: BatchNormState::new(k),
        })
    }

    pub fn from_reference(fb: &ReferenceFilterbank) -> Result<Self> {
        Self::new(fb.weights.clone(), fb.center_freqs.clone())
    }

    pub fn num_bins(&self) -> usize {
        self.weights.value.shape()[0]
    }

    pub fn num_channels(&self) -> usize {
        self.weights.value.shape()[1]
    }

    /// `relu(W)` as plain numbers.
    pub fn effective_weights(&self) -> Tensor {
        self.weights.value.map(|v| v.max(0.0))
    }

    pub fn prepare(&self, clips: &[Vec<f64>]) -> Result<Tensor> {
        power_spectrogram_batch(clips.iter().map(Vec::as_slice), &self.framing, self.window)
    }

    /// Pre-normalization features `[B, T, K]` from spectrograms `[B, T, F]`.
    pub fn forward(&mut self, tape: &mut Tape, spec: Var) -> Result<Var> {
        let s = tape.shape(spec).to_vec();
        let f = self.num_bins();
        if s.len() != 3 || s[2] != f {
            return Err(Error::ShapeMismatch {
                op: "fbmatrix_forward",
                lhs: s,
                rhs: self.weights.value.shape().to_vec(),
            });
        }
        let (b, t) = (s[0], s[1]);
        let w = tape.param(&mut self.weights);
        let hw = tape.relu(w)?;
        let flat = tape.reshape(spec, &[b * t, f])?;
        let y = tape.matmul(flat, hw)?;
        let y = mask_channels(tape, y, &self.removed)?;
        let y = log_compress(tape, y, self.eta)?;
        tape.reshape(y, &[b, t, self.num_channels()])
    }

    /// `relu(W)` as CSV, one row per frequency bin.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_matrix_csv(w, &self.effective_weights())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::make_mel_filterbank;

    fn mel() -> FilterbankMatrix {
        FilterbankMatrix::from_reference(&make_mel_filterbank(241, 40, 16000.0, 0.0, 8000.0).unwrap()).unwrap()
    }

    #[test]
    fn negative_weights_give_floor() {
        let mut fb = FilterbankMatrix::new(Tensor::full(&[241, 40], -0.3), vec![0.0; 40]).unwrap();
        let mut tape = Tape::new();
        let spec = tape.constant(Tensor::full(&[2, 98, 241], 3.0));
        let y = fb.forward(&mut tape, spec).unwrap();
        assert_eq!(tape.shape(y), &[2, 98, 40]);
        assert!(tape.value(y).data().iter().all(|&v| v == -50.0));
    }

    #[test]
    fn zero_spectrogram_gives_floor() {
        let mut fb = mel();
        let mut tape = Tape::new();
        let spec = tape.constant(Tensor::zeros(&[1, 98, 241]));
        let y = fb.forward(&mut tape, spec).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == -50.0));
    }

    #[test]
    fn wrong_bin_count_is_rejected() {
        let mut fb = mel();
        let mut tape = Tape::new();
        let spec = tape.constant(Tensor::zeros(&[1, 98, 240]));
        assert!(matches!(fb.forward(&mut tape, spec), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn removal_floors_only_masked_channels() {
        let mut fb = mel();
        fb.removed[3] = true;
        let mut tape = Tape::new();
        let spec = tape.constant(Tensor::full(&[1, 98, 241], 1.0));
        let y = fb.forward(&mut tape, spec).unwrap();
        let v = tape.value(y).data();
        assert_eq!(v[3], -50.0);
        assert!(v[4] > -50.0);
    }
}
