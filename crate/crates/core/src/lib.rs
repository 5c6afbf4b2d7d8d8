//! Residual-quantized neural audio codec for multi-stem music source separation.
//!
//! The crate is organized by subsystem:
//!
//! - [`dsp`]: waveforms, resampling, STFT and mel spectrograms.
//! - [`rvq`]: residual vector quantizer, code grids and their binary format.
//! - [`codec`]: the convolutional/recurrent encoder-decoder and its losses.
//! - [`metrics`]: SI-SDR, SI-SDRi and the chunked evaluation protocol.
//! - [`data`]: WAV I/O, stem directories, chunking, and a synthetic dataset.
//! - [`lm`]: autoregressive spatial/depth transformer prior over code grids.
//! - [`harness`]: configuration, checkpoints, training loops and commands.
//! - [`optim`]: Adam and gradient clipping.
//! - [`tensor`]: the reverse-mode autodiff engine everything trains on.

pub mod codec;
pub mod data;
pub mod dsp;
pub mod error;
pub mod harness;
pub mod lm;
pub mod metrics;
pub mod optim;
pub mod rvq;
pub mod tensor;

pub use error::{Error, Result};
