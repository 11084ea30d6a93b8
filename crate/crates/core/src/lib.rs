//! Noise-robust voice activity projection (VAP) for turn-taking.
//!
//! The crate predicts the near-future voice activity of two dialogue
//! participants from their audio at 10 Hz, trains that predictor under
//! multi-condition noise augmentation, streams it in real time, and races
//! it against a simulated cloud speech-to-text endpointer to measure how
//! much earlier a robot can take its turn.
//!
//! | module | what it does |
//! |---|---|
//! | [`audio`] | waveforms, WAV I/O, power, energy-based labels |
//! | [`noise`] | exact-SNR mixing, condition sampling, 8:1:1 splits |
//! | [`codebook`] | 256-state projection codebook and `p_now` |
//! | [`features`] | log-mel frontend |
//! | [`model`] | transformer predictor, loss, training, gradient check |
//! | [`streaming`] | 5 s ring buffer and 10 Hz prediction ticks |
//! | [`endpoint`] | VAP endpointer, simulated STT, hybrid arbiter |
//! | [`sim`] | synthetic dialogues and response-time sessions |
//! | [`stats`] | descriptive statistics and the rank-sum test |
//! | [`pipeline`] | reproducible run-directory commands used by `vapctl` |

pub mod audio;
pub mod codebook;
pub mod endpoint;
pub mod error;
pub mod features;
pub mod model;
pub mod noise;
pub mod pipeline;
pub mod sim;
pub mod stats;
pub mod streaming;

pub use error::{Error, Result};
