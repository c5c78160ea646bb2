//! FFT-based 1-D convolution of waveforms with a bank of kernels, per-frame energy
//! reduction, and the fused combination of both used by the gammachirp front-end.
//!
//! The fused primitive never materializes the `[B, K, L]` filtered signals: each
//! channel is synthesized, reduced to frame energies and dropped, then re-synthesized
//! during the backward sweep.

use std::cell::RefCell;
use std::sync::Arc;

use realfft::num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use crate::autodiff::tape::{Backward, Tape, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<RealFftPlanner<f64>> = RefCell::new(RealFftPlanner::new());
}

/// Smallest `2^a 3^b 5^c` that is at least `n`.
pub fn fast_fft_len(n: usize) -> usize {
    let mut best = n.next_power_of_two();
    let mut p5 = 1;
    while p5 < best {
        let mut p35 = p5;
        while p35 < best {
            let mut m = p35;
            while m < n {
                m *= 2;
            }
            best = best.min(m);
            p35 *= 3;
        }
        p5 *= 5;
    }
    best
}

/// Zero-padded real FFT pair of a fixed length.
#[derive(Clone)]
pub(crate) struct RealFft {
    n: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
}

impl RealFft {
    pub(crate) fn new(n: usize) -> Self {
        PLANNER.with(|p| {
            let mut p = p.borrow_mut();
            Self {
                n,
                r2c: p.plan_fft_forward(n),
                c2r: p.plan_fft_inverse(n),
            }
        })
    }

    pub(crate) fn len(&self) -> usize {
        self.n
    }

    pub(crate) fn forward(&self, x: &[f64]) -> Vec<Complex<f64>> {
        let mut buf = vec![0.0; self.n];
        buf[..x.len()].copy_from_slice(x);
        self.forward_in_place(&mut buf)
    }

    /// `buf` must have length `n`; its contents are clobbered.
    pub(crate) fn forward_in_place(&self, buf: &mut [f64]) -> Vec<Complex<f64>> {
        let mut out = self.r2c.make_output_vec();
        self.r2c
            .process(buf, &mut out)
            .expect("forward FFT buffer sizes are fixed by construction");
        out
    }

    /// Inverse transform including the `1/n` normalization.
    pub(crate) fn inverse(&self, mut spec: Vec<Complex<f64>>) -> Vec<f64> {
        spec[0].im = 0.0;
        if self.n % 2 == 0 {
            let last = spec.len() - 1;
            spec[last].im = 0.0;
        }
        let mut out = vec![0.0; self.n];
        self.c2r
            .process(&mut spec, &mut out)
            .expect("inverse FFT buffer sizes are fixed by construction");
        let s = 1.0 / self.n as f64;
        out.iter_mut().for_each(|v| *v *= s);
        out
    }
}

fn mul_spec(a: &[Complex<f64>], b: &[Complex<f64>]) -> Vec<Complex<f64>> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

fn mul_conj_acc(acc: &mut [Complex<f64>], a: &[Complex<f64>], b: &[Complex<f64>]) {
    for ((s, x), y) in acc.iter_mut().zip(a).zip(b) {
        *s += x * y.conj();
    }
}

/// Output alignment of a 1-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvMode {
    /// Output length equals input length; the kernel is centered (offset `(Lk - 1) / 2`).
    Same,
    /// Output length equals input length; output `n` only sees input samples up to `n`.
    Causal,
    /// Only fully overlapping positions, length `L - Lk + 1`.
    Valid,
}

impl ConvMode {
    fn offset_and_len(self, l: usize, lk: usize) -> Option<(usize, usize)> {
        match self {
            ConvMode::Same => Some(((lk - 1) / 2, l)),
            ConvMode::Causal => Some((0, l)),
            ConvMode::Valid => (l >= lk).then(|| (lk - 1, l - lk + 1)),
        }
    }
}

/// How each frame of a filtered channel is reduced to an energy value.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameEnergySpec {
    pub frame_len: usize,
    pub hop: usize,
    /// Per-sample analysis window of length `frame_len` (all ones for rectangular).
    pub window: Vec<f64>,
    /// Replace the Parseval sum by `frame_len * max|x|^2`.
    pub max_pool: bool,
}

impl FrameEnergySpec {
    pub fn rectangular(frame_len: usize, hop: usize) -> Self {
        Self {
            frame_len,
            hop,
            window: vec![1.0; frame_len],
            max_pool: false,
        }
    }

    /// `floor((L - M) / hop) + 1`; zero when the signal is shorter than one frame.
    pub fn num_frames(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            (len - self.frame_len) / self.hop + 1
        }
    }

    fn validate(&self) -> Result<()> {
        if self.frame_len == 0 || self.hop == 0 || self.hop > self.frame_len {
            return Err(Error::InvalidFraming(format!(
                "frame_len {} hop {}",
                self.frame_len, self.hop
            )));
        }
        if self.window.len() != self.frame_len {
            return Err(Error::InvalidFraming(format!(
                "window has {} taps for a {} sample frame",
                self.window.len(),
                self.frame_len
            )));
        }
        Ok(())
    }

    /// Energies of `frames` frames of `y`; frames running past the end are zero-padded.
    /// Writes `out[tau * stride]` and, in max-pool mode, the argmax sample index.
    fn energies(&self, y: &[f64], frames: usize, out: &mut [f64], stride: usize, argmax: &mut [usize]) {
        let m = self.frame_len as f64;
        for tau in 0..frames {
            let start = tau * self.hop;
            let end = (start + self.frame_len).min(y.len());
            let frame = &y[start..end];
            out[tau * stride] = if self.max_pool {
                let (j, v) = frame.iter().enumerate().fold((0, 0.0f64), |(bj, bv), (j, &v)| {
                    if v.abs() > bv {
                        (j, v.abs())
                    } else {
                        (bj, bv)
                    }
                });
                argmax[tau] = start + j;
                m * v * v
            } else {
                m * frame
                    .iter()
                    .zip(&self.window)
                    .map(|(x, w)| (w * x) * (w * x))
                    .sum::<f64>()
            };
        }
    }

    /// Accumulates `dE/dy` for the frames of one channel into `dy`.
    fn energy_grad(&self, y: &[f64], frames: usize, de: &[f64], stride: usize, argmax: &[usize], dy: &mut [f64]) {
        let m2 = 2.0 * self.frame_len as f64;
        for tau in 0..frames {
            let g = de[tau * stride];
            if g == 0.0 {
                continue;
            }
            if self.max_pool {
                let i = argmax[tau];
                dy[i] += g * m2 * y[i];
            } else {
                let start = tau * self.hop;
                let end = (start + self.frame_len).min(y.len());
                for (i, w) in (start..end).zip(&self.window) {
                    dy[i] += g * m2 * w * w * y[i];
                }
            }
        }
    }
}

struct Conv1d {
    x: Var,
    kernels: Var,
    fft: RealFft,
    offset: usize,
    out_len: usize,
}

impl Backward for Conv1d {
    fn name(&self) -> &'static str {
        "conv1d"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.x, self.kernels]
    }

    fn backward(&self, tape: &Tape, _out: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (xs, ks) = (tape.value(self.x), tape.value(self.kernels));
        let (b, l) = (xs.shape()[0], xs.shape()[1]);
        let (k, lk) = (ks.shape()[0], ks.shape()[1]);
        let half = self.fft.len() / 2 + 1;
        let xf: Vec<_> = xs.data().chunks(l).map(|r| self.fft.forward(r)).collect();
        let kf: Vec<_> = ks.data().chunks(lk).map(|r| self.fft.forward(r)).collect();
        let mut dkf = vec![vec![Complex::new(0.0, 0.0); half]; k];
        let mut dxf = vec![vec![Complex::new(0.0, 0.0); half]; b];
        for bi in 0..b {
            for ki in 0..k {
                let mut buf = vec![0.0; self.fft.len()];
                let src = &grad.data()[(bi * k + ki) * self.out_len..(bi * k + ki + 1) * self.out_len];
                buf[self.offset..self.offset + self.out_len].copy_from_slice(src);
                let dyf = self.fft.forward_in_place(&mut buf);
                if needs[1] {
                    mul_conj_acc(&mut dkf[ki], &dyf, &xf[bi]);
                }
                if needs[0] {
                    mul_conj_acc(&mut dxf[bi], &dyf, &kf[ki]);
                }
            }
        }
        let gx = needs[0].then(|| {
            let data = dxf.into_iter().flat_map(|s| self.fft.inverse(s).into_iter().take(l)).collect();
            Tensor::from_parts(vec![b, l], data)
        });
        let gk = needs[1].then(|| {
            let data = dkf.into_iter().flat_map(|s| self.fft.inverse(s).into_iter().take(lk)).collect();
            Tensor::from_parts(vec![k, lk], data)
        });
        vec![gx, gk]
    }
}

struct FrameEnergy {
    x: Var,
    spec: FrameEnergySpec,
    argmax: Vec<usize>,
}

impl Backward for FrameEnergy {
    fn branches(&self, _tape: &Tape, sink: &mut Vec<u64>) {
        if self.spec.max_pool {
            sink.extend(self.argmax.iter().map(|&j| j as u64));
        }
    }

    fn name(&self) -> &'static str {
        "frame_energy"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, tape: &Tape, out: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let x = tape.value(self.x);
        let (b, k, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let t = out.shape()[1];
        let mut dx = vec![0.0; x.numel()];
        for bi in 0..b {
            for ki in 0..k {
                let row = (bi * k + ki) * l;
                let de = &grad.data()[bi * t * k + ki..];
                let am = &self.argmax[(bi * k + ki) * t..(bi * k + ki + 1) * t];
                self.spec
                    .energy_grad(&x.data()[row..row + l], t, de, k, am, &mut dx[row..row + l]);
            }
        }
        vec![Some(Tensor::from_parts(x.shape().to_vec(), dx))]
    }
}

struct ConvFrameEnergy {
    x: Var,
    kernels: Var,
    fft: RealFft,
    spec: FrameEnergySpec,
    offset: usize,
    out_len: usize,
    xf: Vec<Vec<Complex<f64>>>,
    kf: Vec<Vec<Complex<f64>>>,
    argmax: Vec<usize>,
}

impl Backward for ConvFrameEnergy {
    fn branches(&self, _tape: &Tape, sink: &mut Vec<u64>) {
        if self.spec.max_pool {
            sink.extend(self.argmax.iter().map(|&j| j as u64));
        }
    }

    fn name(&self) -> &'static str {
        "conv_frame_energy"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.x, self.kernels]
    }

    fn backward(&self, tape: &Tape, out: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (xs, ks) = (tape.value(self.x), tape.value(self.kernels));
        let (b, l) = (xs.shape()[0], xs.shape()[1]);
        let (k, lk) = (ks.shape()[0], ks.shape()[1]);
        let t = out.shape()[1];
        let half = self.fft.len() / 2 + 1;
        let mut dkf = vec![vec![Complex::new(0.0, 0.0); half]; k];
        let mut dxf = vec![vec![Complex::new(0.0, 0.0); half]; b];
        let mut dy = vec![0.0; self.fft.len()];
        for bi in 0..b {
            for ki in 0..k {
                let de = &grad.data()[bi * t * k + ki..];
                if (0..t).all(|tau| de[tau * k] == 0.0) {
                    continue;
                }
                let full = self.fft.inverse(mul_spec(&self.xf[bi], &self.kf[ki]));
                let y = &full[self.offset..self.offset + self.out_len];
                dy.fill(0.0);
                let am = &self.argmax[(bi * k + ki) * t..(bi * k + ki + 1) * t];
                self.spec
                    .energy_grad(y, t, de, k, am, &mut dy[self.offset..self.offset + self.out_len]);
                let dyf = self.fft.forward_in_place(&mut dy);
                if needs[1] {
                    mul_conj_acc(&mut dkf[ki], &dyf, &self.xf[bi]);
                }
                if needs[0] {
                    mul_conj_acc(&mut dxf[bi], &dyf, &self.kf[ki]);
                }
            }
        }
        let gx = needs[0].then(|| {
            let data = dxf.into_iter().flat_map(|s| self.fft.inverse(s).into_iter().take(l)).collect();
            Tensor::from_parts(vec![b, l], data)
        });
        let gk = needs[1].then(|| {
            let data = dkf.into_iter().flat_map(|s| self.fft.inverse(s).into_iter().take(lk)).collect();
            Tensor::from_parts(vec![k, lk], data)
        });
        vec![gx, gk]
    }
}

fn check_signal_and_kernels(tape: &Tape, x: Var, kernels: Var, op: &'static str) -> Result<(usize, usize, usize, usize)> {
    let (sx, sk) = (tape.shape(x), tape.shape(kernels));
    if sx.len() != 2 || sk.len() != 2 || sk[1] == 0 {
        return Err(Error::ShapeMismatch {
            op,
            lhs: sx.to_vec(),
            rhs: sk.to_vec(),
        });
    }
    Ok((sx[0], sx[1], sk[0], sk[1]))
}

impl Tape {
    /// Linear convolution of every row of `x: [B, L]` with every row of `kernels: [K, Lk]`,
    /// giving `[B, K, Lout]`.
    pub fn conv1d(&mut self, x: Var, kernels: Var, mode: ConvMode) -> Result<Var> {
        let (b, l, k, lk) = check_signal_and_kernels(self, x, kernels, "conv1d")?;
        let (offset, out_len) = mode.offset_and_len(l, lk).ok_or_else(|| Error::InvalidShape {
            op: "conv1d",
            shape: vec![b, l],
            reason: format!("signal shorter than {lk} tap kernel in valid mode"),
        })?;
        let fft = RealFft::new(fast_fft_len(l + lk - 1));
        let kf: Vec<_> = self.value(kernels).data().chunks(lk).map(|r| fft.forward(r)).collect();
        let mut out = Vec::with_capacity(b * k * out_len);
        for row in self.value(x).data().chunks(l) {
            let xf = fft.forward(row);
            for kfi in &kf {
                let full = fft.inverse(mul_spec(&xf, kfi));
                out.extend_from_slice(&full[offset..offset + out_len]);
            }
        }
        self.push(
            Tensor::from_parts(vec![b, k, out_len], out),
            Box::new(Conv1d {
                x,
                kernels,
                fft,
                offset,
                out_len,
            }),
        )
    }

    /// Frame energies of `x: [B, K, L]`, returned time-major as `[B, T, K]`.
    pub fn frame_energy(&mut self, x: Var, spec: &FrameEnergySpec) -> Result<Var> {
        spec.validate()?;
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::InvalidShape {
                op: "frame_energy",
                shape: s,
                reason: "expected [B, K, L]".into(),
            });
        }
        let (b, k, l) = (s[0], s[1], s[2]);
        let t = spec.num_frames(l);
        if t == 0 {
            return Err(Error::SignalTooShort {
                len: l,
                frame: spec.frame_len,
            });
        }
        let mut out = vec![0.0; b * t * k];
        let mut argmax = vec![0; b * k * t];
        let xv = self.value(x).data();
        for bi in 0..b {
            for ki in 0..k {
                let row = (bi * k + ki) * l;
                spec.energies(
                    &xv[row..row + l],
                    t,
                    &mut out[bi * t * k + ki..],
                    k,
                    &mut argmax[(bi * k + ki) * t..(bi * k + ki + 1) * t],
                );
            }
        }
        self.push(
            Tensor::from_parts(vec![b, t, k], out),
            Box::new(FrameEnergy {
                x,
                spec: spec.clone(),
                argmax,
            }),
        )
    }

    /// Fused `frame_energy(conv1d(x, kernels, mode), spec)`: `[B, L]` × `[K, Lk]` → `[B, T, K]`.
    pub fn conv_frame_energy(&mut self, x: Var, kernels: Var, mode: ConvMode, spec: &FrameEnergySpec) -> Result<Var> {
        spec.validate()?;
        let (b, l, k, lk) = check_signal_and_kernels(self, x, kernels, "conv_frame_energy")?;
        let (offset, out_len) = mode.offset_and_len(l, lk).ok_or_else(|| Error::InvalidShape {
            op: "conv_frame_energy",
            shape: vec![b, l],
            reason: format!("signal shorter than {lk} tap kernel in valid mode"),
        })?;
        let t = spec.num_frames(out_len);
        if t == 0 {
            return Err(Error::SignalTooShort {
                len: out_len,
                frame: spec.frame_len,
            });
        }
        let fft = RealFft::new(fast_fft_len(l + lk - 1));
        let kf: Vec<_> = self.value(kernels).data().chunks(lk).map(|r| fft.forward(r)).collect();
        let xf: Vec<_> = self.value(x).data().chunks(l).map(|r| fft.forward(r)).collect();
        let mut out = vec![0.0; b * t * k];
        let mut argmax = vec![0; b * k * t];
        for bi in 0..b {
            for (ki, kfi) in kf.iter().enumerate() {
                let full = fft.inverse(mul_spec(&xf[bi], kfi));
                spec.energies(
                    &full[offset..offset + out_len],
                    t,
                    &mut out[bi * t * k + ki..],
                    k,
                    &mut argmax[(bi * k + ki) * t..(bi * k + ki + 1) * t],
                );
            }
        }
        self.push(
            Tensor::from_parts(vec![b, t, k], out),
            Box::new(ConvFrameEnergy {
                x,
                kernels,
                fft,
                spec: spec.clone(),
                offset,
                out_len,
                xf,
                kf,
                argmax,
            }),
        )
    }
}
