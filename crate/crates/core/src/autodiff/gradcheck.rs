//! Central finite-difference gradient checking.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error, for near-zero gradients.
    pub abs_floor: f64,
    /// One-sided slopes disagreeing by more than this fraction mark a kink.
    pub kink_ratio: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-5,
            abs_floor: 1e-8,
            kink_ratio: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Mismatch at a point where the function is not differentiable; not a failure.
    Unreliable,
}

#[derive(Clone, Debug)]
pub struct EntryReport {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub status: CheckStatus,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub entries: Vec<EntryReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.status != CheckStatus::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &EntryReport> {
        self.entries.iter().filter(|e| e.status == CheckStatus::Fail)
    }

    pub fn unreliable(&self) -> impl Iterator<Item = &EntryReport> {
        self.entries.iter().filter(|e| e.status == CheckStatus::Unreliable)
    }

    /// Largest relative error among reliable comparisons.
    pub fn max_rel_error(&self) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.status != CheckStatus::Unreliable)
            .map(|e| e.rel_error)
            .fold(0.0, f64::max)
    }

    pub fn extend(&mut self, other: GradCheckReport) {
        self.entries.extend(other.entries);
    }
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares `analytic[i]` with the central difference of `f` at `x` for each `i` in `indices`.
pub fn check_gradient(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    analytic: &[f64],
    indices: &[usize],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let f0 = f(x)?;
    let mut probe = x.to_vec();
    let mut entries = Vec::with_capacity(indices.len());
    for &i in indices {
        let h = cfg.step;
        probe[i] = x[i] + h;
        let fp = f(&probe)?;
        probe[i] = x[i] - h;
        let fm = f(&probe)?;
        probe[i] = x[i];
        let numeric = (fp - fm) / (2.0 * h);
        let rel_error = relative_error(analytic[i], numeric, cfg.abs_floor);
        let status = if rel_error <= cfg.tolerance {
            CheckStatus::Pass
        } else {
            let fwd = (fp - f0) / h;
            let bwd = (f0 - fm) / h;
            let scale = fwd.abs().max(bwd.abs()).max(cfg.abs_floor);
            if (fwd - bwd).abs() > cfg.kink_ratio * scale {
                CheckStatus::Unreliable
            } else {
                CheckStatus::Fail
            }
        };
        entries.push(EntryReport {
            index: i,
            analytic: analytic[i],
            numeric,
            rel_error,
            status,
        });
    }
    Ok(GradCheckReport { entries })
}

/// Checks every entry of `x` for the scalar function built by `build` on a fresh tape.
pub fn grad_check(
    build: impl Fn(&mut Tape, Var) -> Result<Var>,
    x: &Tensor,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone(), true);
    let out = build(&mut tape, v)?;
    tape.backward(out)?;
    let analytic = tape
        .grad(v)
        .map(|g| g.data().to_vec())
        .unwrap_or_else(|| vec![0.0; x.numel()]);
    let shape = x.shape().to_vec();
    let eval = |p: &[f64]| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::from_parts(shape.clone(), p.to_vec()));
        let out = build(&mut tape, v)?;
        Ok(tape.value(out).item())
    };
    let indices: Vec<usize> = (0..x.numel()).collect();
    check_gradient(eval, x.data(), &analytic, &indices, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let cfg = GradCheckConfig::default();
        let r = grad_check(|t, x| t.square(x), &Tensor::scalar(3.0), &cfg).unwrap();
        let e = &r.entries[0];
        assert_eq!(e.analytic, 6.0);
        assert!((e.numeric - 6.0).abs() < 1e-8);
        assert!(r.passed());
    }

    #[test]
    fn relu_kink_is_flagged_not_failed() {
        let cfg = GradCheckConfig::default();
        let r = grad_check(|t, x| t.relu(x), &Tensor::scalar(0.0), &cfg).unwrap();
        assert_eq!(r.entries[0].status, CheckStatus::Unreliable);
        assert!(r.passed());
    }

    #[test]
    fn wrong_gradient_fails() {
        let cfg = GradCheckConfig::default();
        let r = check_gradient(|x| Ok(x[0] * x[0]), &[3.0], &[5.0], &[0], &cfg).unwrap();
        assert_eq!(r.entries[0].status, CheckStatus::Fail);
        assert!(!r.passed());
    }
}
