//! Triangular reference filterbanks and the ERB bandwidth formula.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Equivalent rectangular bandwidth in Hz at moderate levels.
pub fn erb(f_hz: f64) -> f64 {
    24.7 + 0.108 * f_hz
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MelScale {
    /// Linear below 1 kHz, logarithmic above (Auditory Toolbox / librosa default).
    #[default]
    Slaney,
    /// `2595 log10(1 + f / 700)`.
    Htk,
}

const SLANEY_F_SP: f64 = 200.0 / 3.0;
const SLANEY_MIN_LOG_HZ: f64 = 1000.0;
const SLANEY_MIN_LOG_MEL: f64 = SLANEY_MIN_LOG_HZ / SLANEY_F_SP;

fn slaney_logstep() -> f64 {
    6.4f64.ln() / 27.0
}

impl MelScale {
    pub fn hz_to_mel(self, f: f64) -> f64 {
        match self {
            MelScale::Htk => 2595.0 * (1.0 + f / 700.0).log10(),
            MelScale::Slaney => {
                if f >= SLANEY_MIN_LOG_HZ {
                    SLANEY_MIN_LOG_MEL + (f / SLANEY_MIN_LOG_HZ).ln() / slaney_logstep()
                } else {
                    f / SLANEY_F_SP
                }
            }
        }
    }

    pub fn mel_to_hz(self, m: f64) -> f64 {
        match self {
            MelScale::Htk => 700.0 * (10f64.powf(m / 2595.0) - 1.0),
            MelScale::Slaney => {
                if m >= SLANEY_MIN_LOG_MEL {
                    SLANEY_MIN_LOG_HZ * (slaney_logstep() * (m - SLANEY_MIN_LOG_MEL)).exp()
                } else {
                    m * SLANEY_F_SP
                }
            }
        }
    }
}

/// Axis on which filter edge points are equally spaced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterbankScale {
    Mel(MelScale),
    Linear,
}

impl FilterbankScale {
    fn forward(self, f: f64) -> f64 {
        match self {
            FilterbankScale::Mel(s) => s.hz_to_mel(f),
            FilterbankScale::Linear => f,
        }
    }

    fn inverse(self, v: f64) -> f64 {
        match self {
            FilterbankScale::Mel(s) => s.mel_to_hz(v),
            FilterbankScale::Linear => v,
        }
    }

    /// `k + 2` edge frequencies equally spaced on this scale between `f_min` and `f_max`.
    pub fn edge_points(self, k: usize, f_min: f64, f_max: f64) -> Vec<f64> {
        let (lo, hi) = (self.forward(f_min), self.forward(f_max));
        let step = (hi - lo) / (k + 1) as f64;
        (0..k + 2).map(|i| self.inverse(lo + step * i as f64)).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriangleNorm {
    /// Apex of every triangle at height 1.
    #[default]
    Peak,
    /// Each triangle scaled to unit area in Hz (`2 / bandwidth`).
    Area,
}

/// `F x K` matrix of triangular filters over the one-sided spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceFilterbank {
    pub weights: Tensor,
    /// Apex frequency of each filter in Hz.
    pub center_freqs: Vec<f64>,
    pub scale: FilterbankScale,
}

impl ReferenceFilterbank {
    pub fn num_bins(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn num_filters(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        let kk = self.num_filters();
        self.weights.data()[k..].iter().step_by(kk).copied().collect()
    }
}

/// Builds `k` triangles whose edges are equally spaced on `scale`.
///
/// Bin `i` sits at `i * (f_s / 2) / (F - 1)` Hz. A filter whose support contains no
/// bin is reported as an error rather than returned as an all-zero column.
pub fn triangular_filterbank(
    bins: usize,
    k: usize,
    sample_rate: f64,
    f_min: f64,
    f_max: f64,
    scale: FilterbankScale,
    norm: TriangleNorm,
) -> Result<ReferenceFilterbank> {
    let nyquist = sample_rate / 2.0;
    if k == 0 || bins < 2 || !(0.0 <= f_min && f_min < f_max && f_max <= nyquist) {
        return Err(Error::Filterbank(format!(
            "need K >= 1, F >= 2 and 0 <= f_min < f_max <= {nyquist}; got K={k} F={bins} band=({f_min}, {f_max})"
        )));
    }
    let edges = scale.edge_points(k, f_min, f_max);
    let bin_hz = nyquist / (bins - 1) as f64;
    let mut w = vec![0.0; bins * k];
    for j in 0..k {
        let (lo, mid, hi) = (edges[j], edges[j + 1], edges[j + 2]);
        let gain = match norm {
            TriangleNorm::Peak => 1.0,
            TriangleNorm::Area => 2.0 / (hi - lo),
        };
        let mut any = false;
        for i in 0..bins {
            let f = i as f64 * bin_hz;
            let v = ((f - lo) / (mid - lo)).min((hi - f) / (hi - mid)).max(0.0);
            if v > 0.0 {
                any = true;
                w[i * k + j] = gain * v;
            }
        }
        if !any {
            return Err(Error::Filterbank(format!(
                "filter {j} ({lo:.2}-{hi:.2} Hz) covers no frequency bin; K={k} is too large for F={bins}"
            )));
        }
    }
    Ok(ReferenceFilterbank {
        weights: Tensor::new(vec![bins, k], w)?,
        center_freqs: edges[1..=k].to_vec(),
        scale,
    })
}

/// Slaney-mel triangles with unit peak height.
pub fn make_mel_filterbank(bins: usize, k: usize, sample_rate: f64, f_min: f64, f_max: f64) -> Result<ReferenceFilterbank> {
    triangular_filterbank(
        bins,
        k,
        sample_rate,
        f_min,
        f_max,
        FilterbankScale::Mel(MelScale::Slaney),
        TriangleNorm::Peak,
    )
}

pub fn make_linear_filterbank(bins: usize, k: usize, sample_rate: f64, f_min: f64, f_max: f64) -> Result<ReferenceFilterbank> {
    triangular_filterbank(
        bins,
        k,
        sample_rate,
        f_min,
        f_max,
        FilterbankScale::Linear,
        TriangleNorm::Peak,
    )
}

/// Writes a matrix as CSV, one line per row, round-trip exact.
pub fn write_matrix_csv<W: Write>(mut w: W, m: &Tensor) -> Result<()> {
    let cols = m.shape().get(1).copied().unwrap_or(1).max(1);
    for row in m.data().chunks(cols) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_matrix_csv<R: BufRead>(r: R) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Csv(format!("line {}: {e}", ln + 1)))?;
        if *cols.get_or_insert(row.len()) != row.len() {
            return Err(Error::Csv(format!("line {}: ragged row", ln + 1)));
        }
        data.extend(row);
        rows += 1;
    }
    Tensor::new(vec![rows, cols.unwrap_or(0)], data)
}

pub fn save_matrix_csv(path: impl AsRef<Path>, m: &Tensor) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_matrix_csv(&mut f, m)?;
    f.flush()?;
    Ok(())
}

pub fn load_matrix_csv(path: impl AsRef<Path>) -> Result<Tensor> {
    read_matrix_csv(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_triangular(fb: &ReferenceFilterbank) {
        for k in 0..fb.num_filters() {
            let col = fb.column(k);
            assert!(col.iter().all(|&v| v >= 0.0));
            let nz: Vec<usize> = (0..col.len()).filter(|&i| col[i] > 0.0).collect();
            let (a, b) = (nz[0], *nz.last().unwrap());
            assert_eq!(b - a + 1, nz.len(), "support of filter {k} not contiguous");
            let peak = (a..=b).max_by(|&i, &j| col[i].total_cmp(&col[j])).unwrap();
            assert!(col[a..=peak].windows(2).all(|w| w[0] <= w[1]));
            assert!(col[peak..=b].windows(2).all(|w| w[0] >= w[1]));
        }
        assert!(fb.center_freqs.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn erb_values() {
        assert_eq!(erb(0.0), 24.7);
        assert_eq!(erb(1000.0), 132.7);
        assert_eq!(erb(8000.0), 888.7);
    }

    #[test]
    fn mel_scales_invert() {
        for s in [MelScale::Slaney, MelScale::Htk] {
            for f in [0.0, 440.0, 999.0, 1000.0, 3000.0, 8000.0] {
                assert!((s.mel_to_hz(s.hz_to_mel(f)) - f).abs() < 1e-9);
            }
        }
        assert!((MelScale::Htk.hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn default_mel_bank_shape_and_centers() {
        let fb = make_mel_filterbank(241, 40, 16000.0, 0.0, 8000.0).unwrap();
        assert_eq!(fb.weights.shape(), &[241, 40]);
        assert_triangular(&fb);
        assert!(fb.center_freqs[0] < 100.0);
        // independent evaluation of the Slaney scale: 1 kHz sits at mel 15,
        // 27 mel steps per factor 6.4 above it
        let hz = |mel: f64| if mel < 15.0 { mel * 200.0 / 3.0 } else { 1000.0 * 6.4f64.powf((mel - 15.0) / 27.0) };
        let top = 15.0 + 27.0 * (8.0f64).ln() / 6.4f64.ln();
        for k in [0usize, 19, 22, 25, 39] {
            let want = hz(top * (k + 1) as f64 / 41.0);
            assert!((fb.center_freqs[k] - want).abs() < 1e-9, "center {k}");
        }
        assert!((fb.center_freqs[19] - 1626.04).abs() < 0.01);
        assert!((fb.center_freqs[25] - 2563.50).abs() < 0.01);
    }

    #[test]
    fn linear_bank_spacing_and_coverage() {
        let fb = make_linear_filterbank(241, 40, 16000.0, 0.0, 8000.0).unwrap();
        assert_triangular(&fb);
        let d = 8000.0 / 41.0;
        for w in fb.center_freqs.windows(2) {
            assert!((w[1] - w[0] - d).abs() < 1e-9);
        }
        let kk = fb.num_filters();
        for i in 10..230 {
            let row: f64 = fb.weights.data()[i * kk..(i + 1) * kk].iter().sum();
            assert!(row > 0.0, "bin {i}");
        }
    }

    #[test]
    fn identity_scale_equals_linear() {
        let a = triangular_filterbank(241, 12, 16000.0, 100.0, 7000.0, FilterbankScale::Linear, TriangleNorm::Peak).unwrap();
        let b = make_linear_filterbank(241, 12, 16000.0, 100.0, 7000.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_filter_spans_band() {
        let fb = make_mel_filterbank(241, 1, 16000.0, 0.0, 8000.0).unwrap();
        let col = fb.column(0);
        assert_eq!(col[0], 0.0);
        assert_eq!(col[240], 0.0);
        assert!(col[1..240].iter().all(|&v| v > 0.0));
    }

    #[test]
    fn too_many_filters_collapse() {
        assert!(matches!(
            make_mel_filterbank(33, 40, 16000.0, 0.0, 8000.0),
            Err(Error::Filterbank(_))
        ));
    }

    #[test]
    fn area_norm_scales_peak() {
        let fb = triangular_filterbank(241, 4, 16000.0, 0.0, 8000.0, FilterbankScale::Linear, TriangleNorm::Area).unwrap();
        // edges every 1600 Hz, so each triangle is 3200 Hz wide with apex 2/3200
        let peak = fb.column(1).into_iter().fold(0.0, f64::max);
        assert!((peak - 2.0 / 3200.0).abs() < 1e-15);
    }

    #[test]
    fn csv_roundtrip() {
        let fb = make_mel_filterbank(241, 40, 16000.0, 0.0, 8000.0).unwrap();
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, &fb.weights).unwrap();
        let back = read_matrix_csv(&buf[..]).unwrap();
        assert_eq!(back, fb.weights);
    }
}
