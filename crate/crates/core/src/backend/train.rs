//! Minibatch training with staged freezing, and evaluation.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, AdamConfig, KwsSystem};
use crate::autodiff::{softmax_rows, NormMode, Tape, Tensor};
use crate::data::{augment, AudioClip, AugmentConfig, NoisePool};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub augment: AugmentConfig,
    /// Score the validation split after every epoch.
    pub validate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 26,
            batch_size: 64,
            adam: AdamConfig::default(),
            augment: AugmentConfig::default(),
            validate: true,
        }
    }
}

/// A run of epochs with fixed trainability.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub frontend_trainable: bool,
    pub backend_trainable: bool,
    pub epochs: usize,
}

/// Independent random streams of one trial, all derived from its seed.
#[derive(Clone, Debug)]
pub struct TrialRng {
    pub init: ChaCha8Rng,
    pub shuffle: ChaCha8Rng,
    pub augment: ChaCha8Rng,
}

impl TrialRng {
    pub fn new(seed: u64) -> Self {
        let stream = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        Self {
            init: stream(0),
            shuffle: stream(1),
            augment: stream(2),
        }
    }
}

pub struct TrainData<'a> {
    pub train: Vec<&'a AudioClip>,
    pub validation: Vec<&'a AudioClip>,
    pub noise: &'a NoisePool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: usize,
    pub train_loss: f64,
    /// Accuracy of the training minibatches as they were seen (train-mode features).
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.train_loss)
    }

    /// `epoch,train_loss,val_accuracy,train_accuracy`; missing validation is left empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,train_loss,val_accuracy,train_accuracy")?;
        for r in &self.records {
            let val = r.val_accuracy.map(|v| v.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{}", r.epoch, r.train_loss, val, r.train_accuracy)?;
        }
        Ok(())
    }
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Runs `stages` in order, then returns the per-epoch history.
///
/// Each stage starts a fresh Adam state. `on_epoch` sees every record as it completes.
pub fn train(
    system: &mut KwsSystem,
    data: &TrainData<'_>,
    stages: &[Stage],
    cfg: &TrainConfig,
    rng: &mut TrialRng,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<History> {
    train_until(system, data, stages, cfg, rng, |r| {
        on_epoch(r);
        false
    })
}

/// As [`train`], but stops after the first epoch for which `stop` returns true.
pub fn train_until(
    system: &mut KwsSystem,
    data: &TrainData<'_>,
    stages: &[Stage],
    cfg: &TrainConfig,
    rng: &mut TrialRng,
    mut stop: impl FnMut(&EpochRecord) -> bool,
) -> Result<History> {
    if data.train.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let mut history = History::default();
    let mut epoch = 0;
    for (si, stage) in stages.iter().enumerate() {
        if !stage.frontend_trainable && !stage.backend_trainable {
            return Err(Error::Training(format!("stage {} trains nothing", si + 1)));
        }
        system.set_trainable(stage.frontend_trainable, stage.backend_trainable);
        let mut adam = Adam::new(cfg.adam);
        for _ in 0..stage.epochs {
            epoch += 1;
            let mut order = data.train.clone();
            order.shuffle(&mut rng.shuffle);
            let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
            for batch in order.chunks(cfg.batch_size.max(1)) {
                let waves: Vec<Vec<f64>> = batch
                    .iter()
                    .map(|c| augment(c, data.noise, &cfg.augment, &mut rng.augment).samples_f64())
                    .collect();
                let labels: Vec<usize> = batch.iter().map(|c| c.label).collect();
                let inputs = system.prepare(&waves)?;
                let mut tape = Tape::new();
                let logits = system.forward(&mut tape, &inputs, NormMode::Train)?;
                let loss = tape.softmax_cross_entropy(logits, &labels)?;
                let lv = tape.value(loss).item();
                if !lv.is_finite() {
                    return Err(Error::NonFinite("training loss"));
                }
                let z = tape.value(logits);
                let classes = z.shape()[1];
                correct += z
                    .data()
                    .chunks(classes)
                    .zip(&labels)
                    .filter(|(row, &y)| argmax(row) == y)
                    .count();
                loss_sum += lv * batch.len() as f64;
                seen += batch.len();
                tape.backward(loss)?;
                adam.step(&tape, system.params_mut());
            }
            let val_accuracy = if cfg.validate && !data.validation.is_empty() {
                let classes = system.backend.config.n_classes;
                Some(evaluate(system, &data.validation, classes, cfg.batch_size)?.accuracy)
            } else {
                None
            };
            let rec = EpochRecord {
                epoch,
                stage: si + 1,
                train_loss: loss_sum / seen as f64,
                train_accuracy: correct as f64 / seen as f64,
                val_accuracy,
            };
            let done = stop(&rec);
            history.records.push(rec);
            if done {
                return Ok(history);
            }
        }
    }
    Ok(history)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub total: usize,
}

impl EvalResult {
    pub fn from_predictions(pred: &[usize], truth: &[usize], classes: usize) -> Self {
        let mut confusion = vec![vec![0; classes]; classes];
        for (&p, &y) in pred.iter().zip(truth) {
            confusion[y][p] += 1;
        }
        let correct = pred.iter().zip(truth).filter(|(p, y)| p == y).count();
        Self {
            accuracy: if truth.is_empty() { 0.0 } else { correct as f64 / truth.len() as f64 },
            confusion,
            total: truth.len(),
        }
    }
}

/// Accuracy and confusion matrix with all normalizations in eval mode.
pub fn evaluate(system: &mut KwsSystem, clips: &[&AudioClip], classes: usize, batch_size: usize) -> Result<EvalResult> {
    if clips.is_empty() {
        return Err(Error::Training("cannot evaluate an empty split".into()));
    }
    let mut pred = Vec::with_capacity(clips.len());
    for batch in clips.chunks(batch_size.max(1)) {
        let waves: Vec<Vec<f64>> = batch.iter().map(|c| c.samples_f64()).collect();
        let inputs = system.prepare(&waves)?;
        let mut tape = Tape::new();
        let logits = system.forward(&mut tape, &inputs, NormMode::Eval)?;
        let z: &Tensor = tape.value(logits);
        let c = z.shape()[1];
        pred.extend(softmax_rows(z.data(), c).chunks(c).map(argmax));
    }
    let truth: Vec<usize> = clips.iter().map(|c| c.label).collect();
    Ok(EvalResult::from_predictions(&pred, &truth, classes))
}
