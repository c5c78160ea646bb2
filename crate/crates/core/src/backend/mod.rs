//! Residual CNN classifier over `[B, C, T, K]` feature maps, the combined front-end plus
//! back-end system, Adam, and the training and evaluation loops.

mod optim;
mod system;
mod train;

pub use optim::{Adam, AdamConfig};
pub use system::{Fusion, KwsSystem};
pub use train::{evaluate, train, train_until, EpochRecord, EvalResult, History, Stage, TrainConfig, TrainData, TrialRng};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchNormState, NormMode, Parameter, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResNetConfig {
    pub n_res_blocks: usize,
    pub channels: usize,
    /// Grow the dilation of the `i`-th residual conv as `2^(i / 3)`.
    pub dilation: bool,
    pub n_classes: usize,
    /// `(T, K)` of one input feature map.
    pub input_shape: (usize, usize),
    pub in_channels: usize,
    /// Average pooling `(time, freq)` right after the stem.
    pub pool: Option<(usize, usize)>,
}

impl ResNetConfig {
    /// 6 blocks, 45 channels, dilated convolutions, no pooling.
    pub fn large() -> Self {
        Self {
            n_res_blocks: 6,
            channels: 45,
            dilation: true,
            n_classes: 11,
            input_shape: (98, 40),
            in_channels: 1,
            pool: None,
        }
    }

    /// 3 blocks, 19 channels, 4x3 average pooling after the stem.
    pub fn small() -> Self {
        Self {
            n_res_blocks: 3,
            channels: 19,
            dilation: false,
            n_classes: 11,
            input_shape: (98, 40),
            in_channels: 1,
            pool: Some((4, 3)),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "large" => Ok(Self::large()),
            "small" => Ok(Self::small()),
            _ => Err(Error::Model(format!("unknown preset {name:?} (large, small)"))),
        }
    }

    fn dilation_of(&self, conv_index: usize) -> usize {
        if self.dilation {
            1 << (conv_index / 3)
        } else {
            1
        }
    }

    fn body_shape(&self) -> (usize, usize) {
        let (t, k) = self.input_shape;
        match self.pool {
            Some((pt, pk)) => (t / pt, k / pk),
            None => (t, k),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (t, k) = self.input_shape;
        let (bt, bk) = self.body_shape();
        if t < 3 || k < 3 || bt == 0 || bk == 0 {
            return Err(Error::Model(format!(
                "input {t}x{k} is smaller than the 3x3 stem or the pooling window"
            )));
        }
        if self.channels == 0 || self.n_classes < 2 || self.in_channels == 0 {
            return Err(Error::Model("need channels >= 1, in_channels >= 1 and n_classes >= 2".into()));
        }
        Ok(())
    }
}

/// Batch normalization followed by a per-channel scale and shift.
#[derive(Clone, Debug)]
pub struct AffineNorm {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub state: BatchNormState,
}

impl AffineNorm {
    fn new(name: &str, c: usize) -> Self {
        Self {
            gamma: Parameter::new(format!("{name}.gamma"), Tensor::full(&[1, c, 1, 1], 1.0)),
            beta: Parameter::new(format!("{name}.beta"), Tensor::zeros(&[1, c, 1, 1])),
            state: BatchNormState::new(c),
        }
    }

    fn forward(&mut self, tape: &mut Tape, x: Var, mode: NormMode) -> Result<Var> {
        let y = tape.batch_norm(x, 1, &mut self.state, mode)?;
        let g = tape.param(&mut self.gamma);
        let b = tape.param(&mut self.beta);
        let y = tape.mul(y, g)?;
        tape.add(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv1: Parameter,
    pub norm1: AffineNorm,
    pub conv2: Parameter,
    pub norm2: AffineNorm,
    pub dilations: (usize, usize),
}

/// Glorot-uniform initialized tensor.
fn glorot<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| rng.random_range(-limit..limit)).collect())
}

fn conv_weight<R: Rng + ?Sized>(name: String, cout: usize, cin: usize, rng: &mut R) -> Parameter {
    Parameter::new(name, glorot(&[cout, cin, 3, 3], cin * 9, cout * 9, rng))
}

/// Stem conv, residual blocks, global average pooling and an affine classifier.
#[derive(Clone, Debug)]
pub struct Backend {
    pub config: ResNetConfig,
    pub stem: Parameter,
    pub blocks: Vec<ResBlock>,
    pub dense_w: Parameter,
    pub dense_b: Parameter,
}

/// Builds a back-end with Glorot-uniform weights drawn from `rng`.
pub fn build_model<R: Rng + ?Sized>(config: &ResNetConfig, rng: &mut R) -> Result<Backend> {
    config.validate()?;
    let c = config.channels;
    let stem = conv_weight("backend.stem".into(), c, config.in_channels, rng);
    let blocks = (0..config.n_res_blocks)
        .map(|i| ResBlock {
            conv1: conv_weight(format!("backend.block{i}.conv1"), c, c, rng),
            norm1: AffineNorm::new(&format!("backend.block{i}.bn1"), c),
            conv2: conv_weight(format!("backend.block{i}.conv2"), c, c, rng),
            norm2: AffineNorm::new(&format!("backend.block{i}.bn2"), c),
            dilations: (config.dilation_of(2 * i), config.dilation_of(2 * i + 1)),
        })
        .collect();
    let dense_w = Parameter::new("backend.dense.w", glorot(&[c, config.n_classes], c, config.n_classes, rng));
    let dense_b = Parameter::new("backend.dense.b", Tensor::zeros(&[config.n_classes]));
    Ok(Backend {
        config: config.clone(),
        stem,
        blocks,
        dense_w,
        dense_b,
    })
}

impl Backend {
    pub fn params(&self) -> Vec<&Parameter> {
        let mut out = vec![&self.stem];
        for b in &self.blocks {
            out.extend([&b.conv1, &b.norm1.gamma, &b.norm1.beta, &b.conv2, &b.norm2.gamma, &b.norm2.beta]);
        }
        out.extend([&self.dense_w, &self.dense_b]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = vec![&mut self.stem];
        for b in &mut self.blocks {
            out.push(&mut b.conv1);
            out.push(&mut b.norm1.gamma);
            out.push(&mut b.norm1.beta);
            out.push(&mut b.conv2);
            out.push(&mut b.norm2.gamma);
            out.push(&mut b.norm2.beta);
        }
        out.push(&mut self.dense_w);
        out.push(&mut self.dense_b);
        out
    }

    pub fn norm_states(&self) -> Vec<(String, &BatchNormState)> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(i, b)| {
                [
                    (format!("backend.block{i}.bn1"), &b.norm1.state),
                    (format!("backend.block{i}.bn2"), &b.norm2.state),
                ]
            })
            .collect()
    }

    pub fn norm_states_mut(&mut self) -> Vec<&mut BatchNormState> {
        self.blocks
            .iter_mut()
            .flat_map(|b| [&mut b.norm1.state, &mut b.norm2.state])
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.numel()).sum()
    }

    pub fn set_trainable(&mut self, on: bool) {
        for p in self.params_mut() {
            p.trainable = on;
        }
    }

    /// Logits `[B, n_classes]` from features `[B, C_in, T, K]`.
    pub fn forward(&mut self, tape: &mut Tape, x: Var, mode: NormMode) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        let cfg = &self.config;
        if s.len() != 4 || s[1] != cfg.in_channels || (s[2], s[3]) != cfg.input_shape {
            return Err(Error::ShapeMismatch {
                op: "backend",
                lhs: s,
                rhs: vec![0, cfg.in_channels, cfg.input_shape.0, cfg.input_shape.1],
            });
        }
        let w = tape.param(&mut self.stem);
        let mut h = tape.conv2d(x, w, 1)?;
        h = tape.relu(h)?;
        if let Some((pt, pk)) = cfg.pool {
            h = tape.avg_pool2d(h, pt, pk)?;
        }
        for block in &mut self.blocks {
            let w1 = tape.param(&mut block.conv1);
            let y = tape.conv2d(h, w1, block.dilations.0)?;
            let y = block.norm1.forward(tape, y, mode)?;
            let y = tape.relu(y)?;
            let w2 = tape.param(&mut block.conv2);
            let y = tape.conv2d(y, w2, block.dilations.1)?;
            let y = block.norm2.forward(tape, y, mode)?;
            let y = tape.add(y, h)?;
            h = tape.relu(y)?;
        }
        let pooled = tape.mean_axes(h, &[2, 3], false)?;
        let dw = tape.param(&mut self.dense_w);
        let db = tape.param(&mut self.dense_b);
        let z = tape.matmul(pooled, dw)?;
        tape.add(z, db)
    }
}
