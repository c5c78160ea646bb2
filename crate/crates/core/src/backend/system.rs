//! Front-end(s) plus back-end as one trainable unit.

use serde::{Deserialize, Serialize};

use super::Backend;
use crate::autodiff::{NormMode, Parameter, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::frontends::Frontend;

/// How two front-ends' feature maps are joined before the back-end.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Two input channels `[B, 2, T, K]`.
    #[default]
    Stack,
    /// One channel with the filterbank axes concatenated, `[B, 1, T, 2K]`.
    FreqConcat,
}

#[derive(Clone, Debug)]
pub struct KwsSystem {
    pub frontends: Vec<Frontend>,
    pub fusion: Fusion,
    pub backend: Backend,
    /// Front-ends that stay frozen whatever the stage asks for.
    pub frontend_locked: Vec<bool>,
}

impl KwsSystem {
    pub fn new(frontends: Vec<Frontend>, fusion: Fusion, backend: Backend) -> Result<Self> {
        if frontends.is_empty() || frontends.len() > 2 {
            return Err(Error::Model(format!("expected 1 or 2 front-ends, got {}", frontends.len())));
        }
        Ok(Self {
            frontend_locked: vec![false; frontends.len()],
            frontends,
            fusion,
            backend,
        })
    }

    /// Per-front-end preprocessed inputs for a batch of waveforms.
    pub fn prepare(&self, clips: &[Vec<f64>]) -> Result<Vec<Tensor>> {
        self.frontends.iter().map(|f| f.prepare(clips)).collect()
    }

    /// Normalized features joined into the back-end layout `[B, C, T, K']`.
    pub fn features(&mut self, tape: &mut Tape, inputs: &[Tensor], mode: NormMode) -> Result<Var> {
        if inputs.len() != self.frontends.len() {
            return Err(Error::Model(format!(
                "{} inputs for {} front-ends",
                inputs.len(),
                self.frontends.len()
            )));
        }
        let mut maps = Vec::with_capacity(inputs.len());
        for (fe, x) in self.frontends.iter_mut().zip(inputs) {
            let xv = tape.constant(x.clone());
            maps.push(fe.forward(tape, xv, mode)?);
        }
        let s = tape.shape(maps[0]).to_vec();
        if maps.len() == 2 && tape.shape(maps[1])[..2] != s[..2] {
            return Err(Error::ShapeMismatch {
                op: "fusion",
                lhs: s,
                rhs: tape.shape(maps[1]).to_vec(),
            });
        }
        let (b, t) = (s[0], s[1]);
        let mut chans = Vec::with_capacity(maps.len());
        for m in &maps {
            let k = tape.shape(*m)[2];
            chans.push(tape.reshape(*m, &[b, 1, t, k])?);
        }
        if chans.len() == 1 {
            return Ok(chans[0]);
        }
        match self.fusion {
            Fusion::Stack => {
                if tape.shape(chans[0]) != tape.shape(chans[1]) {
                    return Err(Error::ShapeMismatch {
                        op: "fusion",
                        lhs: tape.shape(chans[0]).to_vec(),
                        rhs: tape.shape(chans[1]).to_vec(),
                    });
                }
                tape.concat(&chans, 1)
            }
            Fusion::FreqConcat => tape.concat(&chans, 3),
        }
    }

    pub fn forward(&mut self, tape: &mut Tape, inputs: &[Tensor], mode: NormMode) -> Result<Var> {
        let x = self.features(tape, inputs, mode)?;
        self.backend.forward(tape, x, mode)
    }

    pub fn set_trainable(&mut self, frontend: bool, backend: bool) {
        for (f, &locked) in self.frontends.iter_mut().zip(&self.frontend_locked) {
            f.set_trainable(frontend && !locked);
        }
        self.backend.set_trainable(backend);
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out: Vec<&mut Parameter> = Vec::new();
        for f in &mut self.frontends {
            out.extend(f.params_mut());
        }
        out.extend(self.backend.params_mut());
        out
    }

    pub fn num_params(&self) -> usize {
        self.frontends.iter().flat_map(|f| f.params()).map(|p| p.value.numel()).sum::<usize>() + self.backend.num_params()
    }

    /// Every parameter and running statistic, for checkpoints.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, f) in self.frontends.iter().enumerate() {
            for p in f.params() {
                out.push((format!("fe{i}.{}", p.name), p.value.clone()));
            }
            push_stats(&mut out, &format!("fe{i}.norm"), f.norm());
        }
        for p in self.backend.params() {
            out.push((p.name.clone(), p.value.clone()));
        }
        for (name, st) in self.backend.norm_states() {
            push_stats(&mut out, &name, st);
        }
        out
    }

    /// Restores values saved by [`Self::named_tensors`]; unknown names are an error.
    pub fn load_named_tensors(&mut self, tensors: &[(String, Tensor)]) -> Result<()> {
        use std::collections::HashMap;
        let map: HashMap<&str, &Tensor> = tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let take = |name: &str| -> Result<Tensor> {
            map.get(name)
                .map(|t| (*t).clone())
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
        };
        for (i, f) in self.frontends.iter_mut().enumerate() {
            for p in f.params_mut() {
                p.value = take(&format!("fe{i}.{}", p.name))?;
            }
            load_stats(&map, &format!("fe{i}.norm"), f.norm_mut());
        }
        for p in self.backend.params_mut() {
            p.value = take(&p.name.clone())?;
        }
        let names: Vec<String> = self.backend.norm_states().into_iter().map(|(n, _)| n).collect();
        for (name, st) in names.iter().zip(self.backend.norm_states_mut()) {
            load_stats(&map, name, st);
        }
        Ok(())
    }
}

fn push_stats(out: &mut Vec<(String, Tensor)>, name: &str, st: &crate::autodiff::BatchNormState) {
    if let (Some(m), Some(v)) = (&st.running_mean, &st.running_var) {
        out.push((format!("{name}.running_mean"), Tensor::from_vec(m.clone())));
        out.push((format!("{name}.running_var"), Tensor::from_vec(v.clone())));
    }
}

fn load_stats(map: &std::collections::HashMap<&str, &Tensor>, name: &str, st: &mut crate::autodiff::BatchNormState) {
    let m = map.get(format!("{name}.running_mean").as_str());
    let v = map.get(format!("{name}.running_var").as_str());
    if let (Some(m), Some(v)) = (m, v) {
        st.running_mean = Some(m.data().to_vec());
        st.running_var = Some(v.data().to_vec());
    }
}
