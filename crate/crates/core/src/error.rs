use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape for {op}: {shape:?} ({reason})")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("backward already ran on this tape; re-run the forward pass first")]
    BackwardTwice,
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("batch norm running statistics are uninitialized; run a training step first")]
    UninitializedStats,
    #[error("signal of {len} samples is shorter than the {frame} sample frame")]
    SignalTooShort { len: usize, frame: usize },
    #[error("invalid framing: {0}")]
    InvalidFraming(String),
    #[error("filterbank: {0}")]
    Filterbank(String),
    #[error("dataset root {0} does not exist or is not a directory")]
    MissingRoot(PathBuf),
    #[error("audio: {0}")]
    InvalidAudio(String),
    #[error("split: {0}")]
    Split(String),
    #[error("model: {0}")]
    Model(String),
    #[error("training: {0}")]
    Training(String),
    #[error("parse error at position {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("experiment: {0}")]
    Experiment(String),
    #[error("trial with seed {seed} failed: {source}")]
    Trial {
        seed: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("plot: {0}")]
    Plot(String),
}
