//! Batch normalization and the softmax cross-entropy loss.

use serde::{Deserialize, Serialize};

use crate::autodiff::tape::{Backward, Tape, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

/// Running statistics of one batch-normalization layer.
///
/// Statistics start uninitialized; the first training step adopts the batch statistics
/// directly, later steps blend with `running = momentum * running + (1 - momentum) * batch`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
    pub running_mean: Option<Vec<f64>>,
    pub running_var: Option<Vec<f64>>,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            momentum: 0.99,
            eps: 1e-5,
            running_mean: None,
            running_var: None,
        }
    }

    pub fn is_initialized(&self) -> bool {
        self.running_mean.is_some() && self.running_var.is_some()
    }

    fn update(&mut self, mean: &[f64], var: &[f64]) {
        let m = self.momentum;
        match (&mut self.running_mean, &mut self.running_var) {
            (Some(rm), Some(rv)) => {
                for c in 0..self.channels {
                    rm[c] = m * rm[c] + (1.0 - m) * mean[c];
                    rv[c] = m * rv[c] + (1.0 - m) * var[c];
                }
            }
            _ => {
                self.running_mean = Some(mean.to_vec());
                self.running_var = Some(var.to_vec());
            }
        }
    }
}

struct BatchNorm {
    x: Var,
    channel_axis: usize,
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    mode: NormMode,
}

fn layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

impl Backward for BatchNorm {
    fn name(&self) -> &'static str {
        "batch_norm"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, tape: &Tape, _out: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let shape = tape.shape(self.x).to_vec();
        let (outer, ch, inner) = layout(&shape, self.channel_axis);
        let g = grad.data();
        let mut dx = vec![0.0; g.len()];
        match self.mode {
            NormMode::Eval => {
                for o in 0..outer {
                    for c in 0..ch {
                        let base = (o * ch + c) * inner;
                        for i in base..base + inner {
                            dx[i] = g[i] * self.inv_std[c];
                        }
                    }
                }
            }
            NormMode::Train => {
                let n = (outer * inner) as f64;
                let mut sum_g = vec![0.0; ch];
                let mut sum_gx = vec![0.0; ch];
                for o in 0..outer {
                    for c in 0..ch {
                        let base = (o * ch + c) * inner;
                        for i in base..base + inner {
                            sum_g[c] += g[i];
                            sum_gx[c] += g[i] * self.x_hat[i];
                        }
                    }
                }
                for o in 0..outer {
                    for c in 0..ch {
                        let base = (o * ch + c) * inner;
                        let k = self.inv_std[c] / n;
                        for i in base..base + inner {
                            dx[i] = k * (n * g[i] - sum_g[c] - self.x_hat[i] * sum_gx[c]);
                        }
                    }
                }
            }
        }
        vec![Some(Tensor::from_parts(shape, dx))]
    }
}

struct SoftmaxCrossEntropy {
    logits: Var,
    labels: Vec<usize>,
    probs: Vec<f64>,
}

impl Backward for SoftmaxCrossEntropy {
    fn name(&self) -> &'static str {
        "softmax_cross_entropy"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.logits]
    }

    fn backward(&self, tape: &Tape, _out: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let shape = tape.shape(self.logits).to_vec();
        let (b, c) = (shape[0], shape[1]);
        let scale = grad.item() / b as f64;
        let mut d = self.probs.clone();
        for (i, &y) in self.labels.iter().enumerate() {
            d[i * c + y] -= 1.0;
        }
        d.iter_mut().for_each(|v| *v *= scale);
        vec![Some(Tensor::from_parts(shape, d))]
    }
}

impl Tape {
    /// Normalizes each slice along `channel_axis` over every other axis.
    ///
    /// Train mode uses (biased) batch statistics and updates `state`; eval mode uses the
    /// running statistics and fails if none have been recorded yet.
    pub fn batch_norm(
        &mut self,
        x: Var,
        channel_axis: usize,
        state: &mut BatchNormState,
        mode: NormMode,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if channel_axis >= shape.len() || shape[channel_axis] != state.channels {
            return Err(Error::InvalidShape {
                op: "batch_norm",
                shape,
                reason: format!("expected {} channels on axis {channel_axis}", state.channels),
            });
        }
        let (outer, ch, inner) = layout(&shape, channel_axis);
        let xv = self.value(x).data();
        let (mean, var) = match mode {
            NormMode::Train => {
                let n = (outer * inner) as f64;
                let mut mean = vec![0.0; ch];
                for o in 0..outer {
                    for c in 0..ch {
                        let base = (o * ch + c) * inner;
                        mean[c] += xv[base..base + inner].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                let mut var = vec![0.0; ch];
                for o in 0..outer {
                    for c in 0..ch {
                        let base = (o * ch + c) * inner;
                        var[c] += xv[base..base + inner]
                            .iter()
                            .map(|v| (v - mean[c]) * (v - mean[c]))
                            .sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= n);
                state.update(&mean, &var);
                (mean, var)
            }
            NormMode::Eval => match (&state.running_mean, &state.running_var) {
                (Some(m), Some(v)) => (m.clone(), v.clone()),
                _ => return Err(Error::UninitializedStats),
            },
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
        let mut x_hat = vec![0.0; xv.len()];
        for o in 0..outer {
            for c in 0..ch {
                let base = (o * ch + c) * inner;
                for i in base..base + inner {
                    x_hat[i] = (xv[i] - mean[c]) * inv_std[c];
                }
            }
        }
        let value = Tensor::from_parts(shape, x_hat.clone());
        self.push(
            value,
            Box::new(BatchNorm {
                x,
                channel_axis,
                x_hat,
                inv_std,
                mode,
            }),
        )
    }

    /// Mean categorical cross-entropy of `logits: [B, C]` against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() || labels.iter().any(|&y| y >= shape[1]) {
            return Err(Error::InvalidShape {
                op: "softmax_cross_entropy",
                shape,
                reason: format!("{} labels", labels.len()),
            });
        }
        let c = shape[1];
        let probs = softmax_rows(self.value(logits).data(), c);
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| -probs[i * c + y].max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / labels.len() as f64;
        self.push(
            Tensor::scalar(loss),
            Box::new(SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            }),
        )
    }
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_class_count() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros(&[3, 11]));
        let l = tape.softmax_cross_entropy(z, &[0, 5, 10]).unwrap();
        assert!((tape.value(l).item() - 11f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn train_mode_normalizes_each_channel() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..16 * 3 * 5).map(|i| ((i * 7919) % 101) as f64 * 0.37 + (i % 3) as f64).collect();
        let x = tape.constant(Tensor::new(vec![16, 3, 5], data).unwrap());
        let mut st = BatchNormState::new(3);
        let y = tape.batch_norm(x, 1, &mut st, NormMode::Train).unwrap();
        let v = tape.value(y).data();
        for c in 0..3 {
            let vals: Vec<f64> = (0..16).flat_map(|b| (0..5).map(move |i| (b * 3 + c) * 5 + i)).map(|i| v[i]).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() <= 1e-6);
            assert!((var - 1.0).abs() <= 1e-4);
        }
        assert!(st.is_initialized());
    }

    #[test]
    fn eval_before_training_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 2]));
        let mut st = BatchNormState::new(2);
        assert!(matches!(
            tape.batch_norm(x, 1, &mut st, NormMode::Eval),
            Err(Error::UninitializedStats)
        ));
    }

    #[test]
    fn constant_channel_maps_to_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[4, 2], -50.0));
        let mut st = BatchNormState::new(2);
        let y = tape.batch_norm(x, 1, &mut st, NormMode::Train).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_mode_is_repeatable() {
        let mut st = BatchNormState::new(2);
        let t = Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 5.0, 8.0, 13.0]).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(t.clone());
        tape.batch_norm(x, 1, &mut st, NormMode::Train).unwrap();
        let a = tape.batch_norm(x, 1, &mut st, NormMode::Eval).unwrap();
        let b = tape.batch_norm(x, 1, &mut st, NormMode::Eval).unwrap();
        assert_eq!(tape.value(a), tape.value(b));
    }
}
