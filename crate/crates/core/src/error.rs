use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("unsupported sample format in {path}: {detail}")]
    UnsupportedEncoding { path: PathBuf, detail: String },
    #[error("unsupported sample rate {found} Hz (expected {expected} Hz)")]
    UnsupportedSampleRate { found: u32, expected: u32 },
    #[error("unsupported channel count {0} (expected mono)")]
    UnsupportedChannels(u16),
    #[error("waveform is empty")]
    EmptyWaveform,
    #[error("SNR undefined: {0} has zero power")]
    SilentInput(&'static str),
    #[error("noise bank is empty")]
    EmptyNoiseBank,
    #[error("SNR set is empty")]
    EmptySnrSet,
    #[error("noise clip '{0}' is shorter than 1 s")]
    ShortNoiseClip(String),
    #[error("dataset needs at least {needed} items, got {got}")]
    TooFewItems { needed: usize, got: usize },
    #[error("state index {0} out of range 0..=255")]
    StateOutOfRange(usize),
    #[error("label window needs {needed} frames, got {got}")]
    ShortWindow { needed: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no frames carry training targets")]
    NoTargets,
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error("stream chunk lengths differ: {a} vs {b}")]
    ChunkMismatch { a: usize, b: usize },
    #[error("VAD track has no active frames")]
    NoSpeech,
    #[error("stream has no model attached")]
    ModelNotAttached,
    #[error("policy {0} requires model parameters")]
    MissingModel(&'static str),
    #[error("no records to summarize")]
    EmptyRecords,
    #[error("empty test set")]
    EmptyTestSet,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
}

impl Error {
    /// Errors caused by the caller's configuration rather than the run itself.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::EmptySnrSet
                | Error::EmptyNoiseBank
                | Error::TooFewItems { .. }
                | Error::MissingModel(_)
                | Error::MissingFile(_)
        )
    }
}
