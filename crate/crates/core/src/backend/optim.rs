//! Adam with bias correction.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Parameter, Tape};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// Per-parameter first and second moment estimates, keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct Adam {
    pub config: AdamConfig,
    state: HashMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: HashMap::new(),
        }
    }

    /// Updates one parameter in place from `grad`.
    pub fn step_one(&mut self, p: &mut Parameter, grad: &[f64]) {
        let c = self.config;
        let st = self.state.entry(p.name.clone()).or_insert_with(|| Moments {
            m: vec![0.0; grad.len()],
            v: vec![0.0; grad.len()],
            t: 0,
        });
        st.t += 1;
        let bc1 = 1.0 - c.beta1.powi(st.t as i32);
        let bc2 = 1.0 - c.beta2.powi(st.t as i32);
        let step = c.lr * bc2.sqrt() / bc1;
        // equivalent to m_hat / (sqrt(v_hat) + eps)
        let eps = c.eps * bc2.sqrt();
        for (((w, g), m), v) in p.value.data_mut().iter_mut().zip(grad).zip(&mut st.m).zip(&mut st.v) {
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            *w -= step * *m / (v.sqrt() + eps);
        }
    }

    /// Steps every trainable parameter that received a gradient on `tape`.
    pub fn step<'p>(&mut self, tape: &Tape, params: impl IntoIterator<Item = &'p mut Parameter>) {
        for p in params {
            if !p.trainable {
                continue;
            }
            if let Some(g) = p.grad(tape) {
                let g = g.data().to_vec();
                self.step_one(p, &g);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut p = Parameter::new("w", Tensor::from_vec(vec![1.0, -2.0, 3.0]));
        for _ in 0..5 {
            adam.step_one(&mut p, &[0.0, 0.0, 0.0]);
        }
        assert_eq!(p.value.data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut p = Parameter::new("w", Tensor::from_vec(vec![0.0, 0.0]));
        adam.step_one(&mut p, &[0.5, -3.0]);
        assert!((p.value.data()[0] + 1e-3).abs() < 1e-9);
        assert!((p.value.data()[1] - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut adam = Adam::new(AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        });
        let mut p = Parameter::new("w", Tensor::scalar(4.0));
        for _ in 0..2000 {
            let g = 2.0 * (p.value.item() - 1.5);
            adam.step_one(&mut p, &[g]);
        }
        assert!((p.value.item() - 1.5).abs() < 1e-3);
    }
}
