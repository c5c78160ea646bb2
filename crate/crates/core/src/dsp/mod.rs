//! Framing, windowing and power spectra of fixed-length waveforms, plus the reference
//! triangular filterbanks used to initialize the learnable front-ends.

mod filterbank;

pub use filterbank::{
    erb, make_linear_filterbank, make_mel_filterbank, triangular_filterbank, load_matrix_csv, read_matrix_csv, save_matrix_csv, write_matrix_csv, FilterbankScale,
    MelScale, ReferenceFilterbank, TriangleNorm,
};

use serde::{Deserialize, Serialize};

use crate::autodiff::{RealFft, Tensor};
use crate::error::{Error, Result};

/// Frame length, hop and sample rate of the short-time analysis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FramingConfig {
    pub frame_length: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl Default for FramingConfig {
    fn default() -> Self {
        Self {
            frame_length: 480,
            hop: 160,
            sample_rate: 16000,
        }
    }
}

impl FramingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.frame_length {
            return Err(Error::InvalidFraming(format!(
                "need 0 < hop <= frame_length, got hop {} frame_length {}",
                self.hop, self.frame_length
            )));
        }
        Ok(())
    }

    /// `floor((len - M) / hop) + 1`, or `None` for signals shorter than one frame.
    pub fn num_frames(&self, len: usize) -> Option<usize> {
        (len >= self.frame_length).then(|| (len - self.frame_length) / self.hop + 1)
    }

    /// One-sided spectrum size `M/2 + 1`.
    pub fn num_bins(&self) -> usize {
        self.frame_length / 2 + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Rectangular,
    /// Periodic Hann, `0.5 - 0.5 cos(2 pi m / M)`.
    Hann,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; len],
            Window::Hann => (0..len)
                .map(|m| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * m as f64 / len as f64).cos())
                .collect(),
        }
    }
}

/// Splits `samples` into `[T, M]` windowed frames.
pub fn frame_signal(samples: &[f64], cfg: &FramingConfig, window: Window) -> Result<Tensor> {
    cfg.validate()?;
    let m = cfg.frame_length;
    let t = cfg.num_frames(samples.len()).ok_or(Error::SignalTooShort {
        len: samples.len(),
        frame: m,
    })?;
    let w = window.coefficients(m);
    let mut data = Vec::with_capacity(t * m);
    for tau in 0..t {
        let start = tau * cfg.hop;
        data.extend(samples[start..start + m].iter().zip(&w).map(|(x, w)| x * w));
    }
    Tensor::new(vec![t, m], data)
}

/// `T x F` matrix of squared one-sided DFT magnitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerSpectrogram {
    pub values: Tensor,
}

impl PowerSpectrogram {
    pub fn num_frames(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn num_bins(&self) -> usize {
        self.values.shape()[1]
    }
}

/// Power spectrogram with an exact length-`M` real FFT per frame.
pub fn power_spectrogram(samples: &[f64], cfg: &FramingConfig, window: Window) -> Result<PowerSpectrogram> {
    let frames = frame_signal(samples, cfg, window)?;
    let (t, m) = (frames.shape()[0], frames.shape()[1]);
    let f = cfg.num_bins();
    let fft = RealFft::new(m);
    let mut out = Vec::with_capacity(t * f);
    let mut buf = vec![0.0; m];
    for row in frames.data().chunks_exact(m) {
        buf.copy_from_slice(row);
        let spec = fft.forward_in_place(&mut buf);
        out.extend(spec.iter().map(|c| c.norm_sqr()));
    }
    Ok(PowerSpectrogram {
        values: Tensor::new(vec![t, f], out)?,
    })
}

/// Stacks per-clip spectrograms into a `[B, T, F]` tensor.
pub fn power_spectrogram_batch<'a>(
    clips: impl IntoIterator<Item = &'a [f64]>,
    cfg: &FramingConfig,
    window: Window,
) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    let mut b = 0;
    for clip in clips {
        let s = power_spectrogram(clip, cfg, window)?;
        let d = (s.num_frames(), s.num_bins());
        if *dims.get_or_insert(d) != d {
            return Err(Error::InvalidShape {
                op: "power_spectrogram_batch",
                shape: vec![d.0, d.1],
                reason: "clips in a batch must share one length".into(),
            });
        }
        data.extend_from_slice(s.values.data());
        b += 1;
    }
    let (t, f) = dims.unwrap_or((0, cfg.num_bins()));
    Tensor::new(vec![b, t, f], data)
}
