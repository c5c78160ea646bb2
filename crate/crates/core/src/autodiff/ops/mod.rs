mod conv1d;
mod elementwise;
mod linalg;
mod norm;
mod shape;

pub use conv1d::{fast_fft_len, ConvMode, FrameEnergySpec};
pub(crate) use conv1d::RealFft;
pub use norm::{softmax_rows, BatchNormState, NormMode};
