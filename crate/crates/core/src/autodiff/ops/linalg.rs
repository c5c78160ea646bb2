//! Matrix product, 2-D convolution and pooling.

use crate::autodiff::tape::{Backward, Tape, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// `c = alpha * a·b + beta * c` for row-major operands with explicit strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass slices sized for the given extents and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct MatMul {
    a: Var,
    b: Var,
}

impl Backward for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.a, self.b]
    }

    fn backward(&self, tape: &Tape, _out: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (a, b) = (tape.value(self.a), tape.value(self.b));
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let g = grad.data();
        let ga = needs[0].then(|| {
            // g (m×n) · bᵀ (n×k)
            let mut d = vec![0.0; m * k];
            gemm(m, n, k, g, n as isize, 1, b.data(), 1, n as isize, 0.0, &mut d);
            Tensor::from_parts(vec![m, k], d)
        });
        let gb = needs[1].then(|| {
            // aᵀ (k×m) · g (m×n)
            let mut d = vec![0.0; k * n];
            gemm(k, m, n, a.data(), 1, k as isize, g, n as isize, 1, 0.0, &mut d);
            Tensor::from_parts(vec![k, n], d)
        });
        vec![ga, gb]
    }
}

/// Geometry of a stride-1, "same"-padded, dilated 2-D convolution.
#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    batch: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    dilation: usize,
}

impl ConvGeom {
    fn taps(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn hw(&self) -> usize {
        self.h * self.w
    }

    /// Column matrix (taps × positions) for one example.
    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        let (h, w, d) = (self.h as isize, self.w as isize, self.dilation as isize);
        let ph = d * (self.kh as isize - 1) / 2;
        let pw = d * (self.kw as isize - 1) / 2;
        let hw = self.hw();
        let mut row = 0;
        for c in 0..self.cin {
            let plane = &x[c * hw..(c + 1) * hw];
            for i in 0..self.kh as isize {
                for j in 0..self.kw as isize {
                    let dst = &mut col[row * hw..(row + 1) * hw];
                    let oi = i * d - ph;
                    let oj = j * d - pw;
                    for y in 0..h {
                        let sy = y + oi;
                        let line = &mut dst[(y * w) as usize..((y + 1) * w) as usize];
                        if sy < 0 || sy >= h {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[(sy * w) as usize..((sy + 1) * w) as usize];
                        for (xo, v) in line.iter_mut().enumerate() {
                            let sx = xo as isize + oj;
                            *v = if sx < 0 || sx >= w { 0.0 } else { src[sx as usize] };
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Scatter-add of a column-matrix gradient back onto the input planes.
    fn col2im(&self, col: &[f64], dx: &mut [f64]) {
        let (h, w, d) = (self.h as isize, self.w as isize, self.dilation as isize);
        let ph = d * (self.kh as isize - 1) / 2;
        let pw = d * (self.kw as isize - 1) / 2;
        let hw = self.hw();
        let mut row = 0;
        for c in 0..self.cin {
            let plane = &mut dx[c * hw..(c + 1) * hw];
            for i in 0..self.kh as isize {
                for j in 0..self.kw as isize {
                    let src = &col[row * hw..(row + 1) * hw];
                    let oi = i * d - ph;
                    let oj = j * d - pw;
                    for y in 0..h {
                        let sy = y + oi;
                        if sy < 0 || sy >= h {
                            continue;
                        }
                        for xo in 0..w {
                            let sx = xo + oj;
                            if sx >= 0 && sx < w {
                                plane[(sy * w + sx) as usize] += src[(y * w + xo) as usize];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

struct Conv2d {
    x: Var,
    weight: Var,
    geom: ConvGeom,
}

impl Backward for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.x, self.weight]
    }

    fn backward(&self, tape: &Tape, _out: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let g = &self.geom;
        let x = tape.value(self.x);
        let wt = tape.value(self.weight);
        let (taps, hw) = (g.taps(), g.hw());
        let mut col = vec![0.0; taps * hw];
        let mut dcol = vec![0.0; taps * hw];
        let mut dw = needs[1].then(|| vec![0.0; g.cout * taps]);
        let mut dx = needs[0].then(|| vec![0.0; x.numel()]);
        for bi in 0..g.batch {
            let dy = &grad.data()[bi * g.cout * hw..(bi + 1) * g.cout * hw];
            if let Some(dw) = dw.as_mut() {
                g.im2col(&x.data()[bi * g.cin * hw..(bi + 1) * g.cin * hw], &mut col);
                // dW += dy (cout×hw) · colᵀ (hw×taps)
                gemm(g.cout, hw, taps, dy, hw as isize, 1, &col, 1, hw as isize, 1.0, dw);
            }
            if let Some(dx) = dx.as_mut() {
                // dcol = Wᵀ (taps×cout) · dy (cout×hw)
                gemm(taps, g.cout, hw, wt.data(), 1, taps as isize, dy, hw as isize, 1, 0.0, &mut dcol);
                g.col2im(&dcol, &mut dx[bi * g.cin * hw..(bi + 1) * g.cin * hw]);
            }
        }
        vec![
            dx.map(|d| Tensor::from_parts(x.shape().to_vec(), d)),
            dw.map(|d| Tensor::from_parts(wt.shape().to_vec(), d)),
        ]
    }
}

struct AvgPool2d {
    x: Var,
    ph: usize,
    pw: usize,
}

impl Backward for AvgPool2d {
    fn name(&self) -> &'static str {
        "avg_pool2d"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, tape: &Tape, out: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let s = tape.shape(self.x).to_vec();
        let (h, w) = (s[2], s[3]);
        let (oh, ow) = (out.shape()[2], out.shape()[3]);
        let scale = 1.0 / (self.ph * self.pw) as f64;
        let mut dx = vec![0.0; s.iter().product()];
        for plane in 0..s[0] * s[1] {
            let gp = &grad.data()[plane * oh * ow..(plane + 1) * oh * ow];
            let dp = &mut dx[plane * h * w..(plane + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let gv = gp[oy * ow + ox] * scale;
                    for y in oy * self.ph..(oy + 1) * self.ph {
                        for x in ox * self.pw..(ox + 1) * self.pw {
                            dp[y * w + x] += gv;
                        }
                    }
                }
            }
        }
        vec![Some(Tensor::from_parts(s, dx))]
    }
}

/// Per-row maximum of |x| for a 2-D tensor, shape `[rows, 1]`.
struct RowMaxAbs {
    x: Var,
    argmax: Vec<usize>,
}

impl Backward for RowMaxAbs {
    fn name(&self) -> &'static str {
        "row_max_abs"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, tape: &Tape, _out: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let x = tape.value(self.x);
        let cols = x.shape()[1];
        let mut dx = vec![0.0; x.numel()];
        for (r, &j) in self.argmax.iter().enumerate() {
            let v = x.data()[r * cols + j];
            dx[r * cols + j] = grad.data()[r] * v.signum();
        }
        vec![Some(Tensor::from_parts(x.shape().to_vec(), dx))]
    }

    fn branches(&self, tape: &Tape, sink: &mut Vec<u64>) {
        let x = tape.value(self.x);
        let cols = x.shape()[1];
        for (r, &j) in self.argmax.iter().enumerate() {
            sink.push(((j as u64) << 1) | (x.data()[r * cols + j] < 0.0) as u64);
        }
    }
}

impl Tape {
    /// `(m×k)·(k×n)` matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            n as isize,
            1,
            0.0,
            &mut out,
        );
        self.push(Tensor::from_parts(vec![m, n], out), Box::new(MatMul { a, b }))
    }

    /// Stride-1 "same" convolution of `x: [B, Cin, H, W]` with `weight: [Cout, Cin, kh, kw]`
    /// (odd kernel extents), dilated by `dilation`.
    pub fn conv2d(&mut self, x: Var, weight: Var, dilation: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(weight));
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: sx.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        if sw[2] % 2 == 0 || sw[3] % 2 == 0 || dilation == 0 {
            return Err(Error::InvalidShape {
                op: "conv2d",
                shape: sw.to_vec(),
                reason: "kernel extents must be odd and dilation positive".into(),
            });
        }
        let geom = ConvGeom {
            batch: sx[0],
            cin: sx[1],
            cout: sw[0],
            h: sx[2],
            w: sx[3],
            kh: sw[2],
            kw: sw[3],
            dilation,
        };
        let (taps, hw) = (geom.taps(), geom.hw());
        let mut out = vec![0.0; geom.batch * geom.cout * hw];
        let mut col = vec![0.0; taps * hw];
        let xv = self.value(x).data();
        let wv = self.value(weight).data();
        for bi in 0..geom.batch {
            geom.im2col(&xv[bi * geom.cin * hw..(bi + 1) * geom.cin * hw], &mut col);
            let dst = &mut out[bi * geom.cout * hw..(bi + 1) * geom.cout * hw];
            gemm(geom.cout, taps, hw, wv, taps as isize, 1, &col, hw as isize, 1, 0.0, dst);
        }
        let shape = vec![geom.batch, geom.cout, geom.h, geom.w];
        self.push(Tensor::from_parts(shape, out), Box::new(Conv2d { x, weight, geom }))
    }

    /// Non-overlapping average pooling over the last two axes of `[B, C, H, W]`
    /// (trailing remainders dropped).
    pub fn avg_pool2d(&mut self, x: Var, ph: usize, pw: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || ph == 0 || pw == 0 || s[2] < ph || s[3] < pw {
            return Err(Error::InvalidShape {
                op: "avg_pool2d",
                shape: s,
                reason: format!("pool {ph}x{pw}"),
            });
        }
        let (h, w) = (s[2], s[3]);
        let (oh, ow) = (h / ph, w / pw);
        let scale = 1.0 / (ph * pw) as f64;
        let xv = self.value(x).data();
        let mut out = vec![0.0; s[0] * s[1] * oh * ow];
        for plane in 0..s[0] * s[1] {
            let src = &xv[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for y in oy * ph..(oy + 1) * ph {
                        for xx in ox * pw..(ox + 1) * pw {
                            acc += src[y * w + xx];
                        }
                    }
                    dst[oy * ow + ox] = acc * scale;
                }
            }
        }
        self.push(
            Tensor::from_parts(vec![s[0], s[1], oh, ow], out),
            Box::new(AvgPool2d { x, ph, pw }),
        )
    }

    /// `max_j |x[r, j]|` for each row of a 2-D tensor, returned as `[rows, 1]`.
    pub fn row_max_abs(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[1] == 0 {
            return Err(Error::InvalidShape {
                op: "row_max_abs",
                shape: s,
                reason: "expected a non-empty 2-D tensor".into(),
            });
        }
        let xv = self.value(x).data();
        let mut argmax = Vec::with_capacity(s[0]);
        let mut out = Vec::with_capacity(s[0]);
        for row in xv.chunks(s[1]) {
            let (j, v) = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bj, bv), (j, &v)| {
                    if v.abs() > bv {
                        (j, v.abs())
                    } else {
                        (bj, bv)
                    }
                });
            argmax.push(j);
            out.push(v);
        }
        self.push(
            Tensor::from_parts(vec![s[0], 1], out),
            Box::new(RowMaxAbs { x, argmax }),
        )
    }
}
