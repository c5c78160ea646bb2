//! Broadcasting binary arithmetic and pointwise unary functions.

use crate::autodiff::tape::{Backward, Tape, Var};
use crate::autodiff::tensor::{
    broadcast_shape, broadcast_strides, for_each_broadcast, reduce_to_shape, Tensor,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryKind {
    fn name(self) -> &'static str {
        match self {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        }
    }

    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryKind::Add => a + b,
            BinaryKind::Sub => a - b,
            BinaryKind::Mul => a * b,
            BinaryKind::Div => a / b,
        }
    }
}

fn binary_forward(kind: BinaryKind, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let out_shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| Error::ShapeMismatch {
        op: kind.name(),
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    })?;
    let (ad, bd) = (a.data(), b.data());
    let data: Vec<f64> = if a.shape() == b.shape() {
        ad.iter().zip(bd).map(|(&x, &y)| kind.apply(x, y)).collect()
    } else if b.numel() == 1 && out_shape == a.shape() {
        let y = bd[0];
        ad.iter().map(|&x| kind.apply(x, y)).collect()
    } else if a.numel() == 1 && out_shape == b.shape() {
        let x = ad[0];
        bd.iter().map(|&y| kind.apply(x, y)).collect()
    } else {
        let n = out_shape.iter().product();
        let mut out = vec![0.0; n];
        let sa = broadcast_strides(a.shape(), &out_shape);
        let sb = broadcast_strides(b.shape(), &out_shape);
        for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| {
            out[o] = kind.apply(ad[ia], bd[ib])
        });
        out
    };
    Ok(Tensor::from_parts(out_shape, data))
}

/// `grad ⊙ other` (or `-grad ⊙ a / b²` for the divisor) expanded to the output shape.
fn expand_with(
    out_shape: &[usize],
    grad: &[f64],
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64, f64) -> f64,
) -> Vec<f64> {
    let sa = broadcast_strides(a.shape(), out_shape);
    let sb = broadcast_strides(b.shape(), out_shape);
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; grad.len()];
    for_each_broadcast(out_shape, &sa, &sb, |o, ia, ib| out[o] = f(grad[o], ad[ia], bd[ib]));
    out
}

struct Binary {
    kind: BinaryKind,
    a: Var,
    b: Var,
}

impl Backward for Binary {
    fn name(&self) -> &'static str {
        self.kind.name()
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.a, self.b]
    }

    fn backward(&self, tape: &Tape, out: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (a, b) = (tape.value(self.a), tape.value(self.b));
        let os = out.shape();
        let g = grad.data();
        let ga = needs[0].then(|| match self.kind {
            BinaryKind::Add | BinaryKind::Sub => reduce_to_shape(g, os, a.shape()),
            BinaryKind::Mul => reduce_to_shape(&expand_with(os, g, a, b, |g, _, y| g * y), os, a.shape()),
            BinaryKind::Div => reduce_to_shape(&expand_with(os, g, a, b, |g, _, y| g / y), os, a.shape()),
        });
        let gb = needs[1].then(|| match self.kind {
            BinaryKind::Add => reduce_to_shape(g, os, b.shape()),
            BinaryKind::Sub => {
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                reduce_to_shape(&neg, os, b.shape())
            }
            BinaryKind::Mul => reduce_to_shape(&expand_with(os, g, a, b, |g, x, _| g * x), os, b.shape()),
            BinaryKind::Div => reduce_to_shape(
                &expand_with(os, g, a, b, |g, x, y| -g * x / (y * y)),
                os,
                b.shape(),
            ),
        });
        vec![ga, gb]
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum UnaryKind {
    Neg,
    AddScalar(f64),
    MulScalar(f64),
    Relu,
    /// `max(x, s)`; ties send the gradient to `x`.
    MaxScalar(f64),
    Log,
    Exp,
    Cos,
    Square,
    Abs,
}

impl UnaryKind {
    fn name(self) -> &'static str {
        match self {
            UnaryKind::Neg => "neg",
            UnaryKind::AddScalar(_) => "add_scalar",
            UnaryKind::MulScalar(_) => "mul_scalar",
            UnaryKind::Relu => "relu",
            UnaryKind::MaxScalar(_) => "max_scalar",
            UnaryKind::Log => "log",
            UnaryKind::Exp => "exp",
            UnaryKind::Cos => "cos",
            UnaryKind::Square => "square",
            UnaryKind::Abs => "abs",
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            UnaryKind::Neg => -x,
            UnaryKind::AddScalar(s) => x + s,
            UnaryKind::MulScalar(s) => x * s,
            UnaryKind::Relu => x.max(0.0),
            UnaryKind::MaxScalar(s) => {
                if x >= s {
                    x
                } else {
                    s
                }
            }
            UnaryKind::Log => x.ln(),
            UnaryKind::Exp => x.exp(),
            UnaryKind::Cos => x.cos(),
            UnaryKind::Square => x * x,
            UnaryKind::Abs => x.abs(),
        }
    }

    /// Local derivative given input `x` and output `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            UnaryKind::Neg => -1.0,
            UnaryKind::AddScalar(_) => 1.0,
            UnaryKind::MulScalar(s) => s,
            UnaryKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            UnaryKind::MaxScalar(s) => {
                if x >= s {
                    1.0
                } else {
                    0.0
                }
            }
            UnaryKind::Log => 1.0 / x,
            UnaryKind::Exp => y,
            UnaryKind::Cos => -x.sin(),
            UnaryKind::Square => 2.0 * x,
            UnaryKind::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

struct Unary {
    kind: UnaryKind,
    x: Var,
}

impl Backward for Unary {
    fn name(&self) -> &'static str {
        self.kind.name()
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, tape: &Tape, out: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let x = tape.value(self.x);
        let data = x
            .data()
            .iter()
            .zip(out.data())
            .zip(grad.data())
            .map(|((&xv, &yv), &g)| g * self.kind.derivative(xv, yv))
            .collect();
        vec![Some(Tensor::from_parts(x.shape().to_vec(), data))]
    }

    fn branches(&self, tape: &Tape, sink: &mut Vec<u64>) {
        let x = tape.value(self.x).data();
        match self.kind {
            UnaryKind::Relu => sink.extend(x.iter().map(|&v| (v > 0.0) as u64)),
            UnaryKind::MaxScalar(s) => sink.extend(x.iter().map(|&v| (v >= s) as u64)),
            UnaryKind::Abs => sink.extend(x.iter().map(|&v| (v > 0.0) as u64 + 2 * (v < 0.0) as u64)),
            _ => {}
        }
    }
}

/// `base ^ exponent` with a scalar (possibly trainable) exponent.
struct Pow {
    base: Var,
    exponent: Var,
}

impl Backward for Pow {
    fn name(&self) -> &'static str {
        "pow"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.base, self.exponent]
    }

    fn backward(&self, tape: &Tape, out: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let base = tape.value(self.base);
        let e = tape.value(self.exponent).item();
        let gb = needs[0].then(|| {
            let data = base
                .data()
                .iter()
                .zip(grad.data())
                .map(|(&x, &g)| g * e * x.powf(e - 1.0))
                .collect();
            Tensor::from_parts(base.shape().to_vec(), data)
        });
        // d/de x^e = x^e ln x, taken as 0 where x <= 0
        let ge = needs[1].then(|| {
            let s: f64 = base
                .data()
                .iter()
                .zip(out.data())
                .zip(grad.data())
                .map(|((&x, &y), &g)| if x > 0.0 { g * y * x.ln() } else { 0.0 })
                .sum();
            Tensor::full(tape.shape(self.exponent), s)
        });
        vec![gb, ge]
    }
}

impl Tape {
    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let value = binary_forward(kind, self.value(a), self.value(b))?;
        self.push(value, Box::new(Binary { kind, a, b }))
    }

    pub(crate) fn unary(&mut self, kind: UnaryKind, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| kind.apply(v));
        self.push(value, Box::new(Unary { kind, x }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Neg, x)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        self.unary(UnaryKind::AddScalar(s), x)
    }

    pub fn mul_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        self.unary(UnaryKind::MulScalar(s), x)
    }

    /// `max(x, 0)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Relu, x)
    }

    /// `max(x, s)`; at a tie the gradient flows to `x`.
    pub fn max_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        self.unary(UnaryKind::MaxScalar(s), x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Log, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Exp, x)
    }

    pub fn cos(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Cos, x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Square, x)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Abs, x)
    }

    /// Elementwise `base ^ exponent` where `exponent` holds a single value.
    pub fn pow(&mut self, base: Var, exponent: Var) -> Result<Var> {
        let e_shape = self.shape(exponent);
        if e_shape.iter().product::<usize>() != 1 {
            return Err(Error::InvalidShape {
                op: "pow",
                shape: e_shape.to_vec(),
                reason: "exponent must hold exactly one value".into(),
            });
        }
        let e = self.value(exponent).item();
        let value = self.value(base).map(|x| x.powf(e));
        self.push(value, Box::new(Pow { base, exponent }))
    }
}
