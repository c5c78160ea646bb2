//! Learnable filterbank front-ends for keyword spotting.
//!
//! Raw waveforms pass through either a trainable filterbank matrix over the power
//! spectrum or a bank of parametric gammachirp filters, then a residual CNN classifier.
//! Everything trains end to end on the reverse-mode tape in [`autodiff`]. The
//! [`experiments`] module runs named training regimes over repeated seeds and
//! summarizes them with confidence intervals.
//!
//! ```no_run
//! use fbkws_core::experiments::{run_experiment, ExperimentData, ExperimentSpec};
//! # fn main() -> fbkws_core::Result<()> {
//! let spec = ExperimentSpec::new("FfBt_26", "small")?;
//! let (data, _skipped) = ExperimentData::load("speech".as_ref(), &Default::default(), 0)?;
//! let report = run_experiment(&spec, &data, "out".as_ref(), &|_, _| {})?;
//! println!("{}", report.headline());
//! # Ok(())
//! # }
//! ```

pub mod autodiff;
pub mod backend;
pub mod data;
pub mod dsp;
pub mod experiments;
pub mod frontends;
mod error;

pub use error::{Error, Result};
