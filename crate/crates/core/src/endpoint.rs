//! End-of-turn decisions: the VAP threshold detector, a simulated cloud
//! speech recognizer, and the arbiter that takes whichever fires first.

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::audio::VadTrack;
use crate::codebook::USER;
use crate::error::{Error, Result};
use crate::streaming::{FrameResult, TICK_S};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VapEndpointerConfig {
    /// `p_now_robot` must exceed this on every frame of the run.
    pub theta: f64,
    pub consecutive_k: usize,
    /// Detected user speech required before any decision.
    pub min_user_speech_ms: f64,
    /// A disabled detector never decides.
    pub enabled: bool,
}

impl Default for VapEndpointerConfig {
    fn default() -> Self {
        Self {
            theta: 0.6,
            consecutive_k: 3,
            min_user_speech_ms: 300.0,
            enabled: true,
        }
    }
}

impl VapEndpointerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.5 && self.theta < 1.0) {
            return Err(Error::Config(format!("theta {} outside (0.5, 1)", self.theta)));
        }
        if self.consecutive_k == 0 {
            return Err(Error::Config("consecutive_k must be at least 1".into()));
        }
        if !(self.min_user_speech_ms >= 0.0) {
            return Err(Error::Config("min_user_speech_ms must be non-negative".into()));
        }
        Ok(())
    }
}

/// Frame-by-frame VAP endpointer for one user turn.
#[derive(Debug, Clone)]
pub struct OnlineVapDetector {
    cfg: VapEndpointerConfig,
    run: usize,
    speech_frames: usize,
    decided: Option<f64>,
}

impl OnlineVapDetector {
    pub fn new(cfg: VapEndpointerConfig) -> Self {
        Self {
            cfg,
            run: 0,
            speech_frames: 0,
            decided: None,
        }
    }

    /// Feeds one frame; returns the decision time on the frame that
    /// completes the run and `None` before and after.
    pub fn feed(&mut self, frame: &FrameResult) -> Option<f64> {
        if !self.cfg.enabled || self.decided.is_some() {
            return None;
        }
        if frame.vad[USER] > 0.5 {
            self.speech_frames += 1;
        }
        let guard = self.speech_frames as f64 * TICK_S * 1e3 >= self.cfg.min_user_speech_ms - 1e-9;
        if guard && frame.p_now_robot > self.cfg.theta {
            self.run += 1;
        } else {
            self.run = 0;
        }
        if self.run >= self.cfg.consecutive_k {
            self.decided = Some(frame.timestamp_s);
        }
        self.decided
    }

    pub fn decision(&self) -> Option<f64> {
        self.decided
    }

    pub fn reset(&mut self) {
        self.run = 0;
        self.speech_frames = 0;
        self.decided = None;
    }
}

/// Earliest time at which `p_now_robot > theta` held for `consecutive_k`
/// consecutive frames after the speech guard was met.
pub fn vap_decide(frames: &[FrameResult], cfg: &VapEndpointerConfig) -> Option<f64> {
    let mut det = OnlineVapDetector::new(cfg.clone());
    frames.iter().find_map(|f| det.feed(f))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatencyFamily {
    Constant,
    Normal,
    LogNormal,
}

/// Added network delay. Draws are truncated at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub family: LatencyFamily,
    pub mean_s: f64,
    pub std_s: f64,
    pub seed: u64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            family: LatencyFamily::LogNormal,
            mean_s: 0.6,
            std_s: 0.3,
            seed: 0,
        }
    }
}

impl LatencyModel {
    pub fn constant(delay_s: f64) -> Self {
        Self {
            family: LatencyFamily::Constant,
            mean_s: delay_s,
            std_s: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean_s >= 0.0) || !(self.std_s >= 0.0) {
            return Err(Error::Config("latency mean and std must be non-negative".into()));
        }
        if self.family == LatencyFamily::LogNormal && self.mean_s == 0.0 && self.std_s > 0.0 {
            return Err(Error::Config("lognormal latency needs a positive mean".into()));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let x = match self.family {
            LatencyFamily::Constant => self.mean_s,
            _ if self.std_s == 0.0 => self.mean_s,
            LatencyFamily::Normal => Normal::new(self.mean_s, self.std_s)
                .expect("validated std")
                .sample(rng),
            LatencyFamily::LogNormal => {
                let var = (1.0 + (self.std_s / self.mean_s).powi(2)).ln();
                LogNormal::new(self.mean_s.ln() - var / 2.0, var.sqrt())
                    .expect("validated parameters")
                    .sample(rng)
            }
        };
        x.max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SttSimConfig {
    pub silence_threshold_ms: f64,
    pub latency: LatencyModel,
}

impl Default for SttSimConfig {
    fn default() -> Self {
        Self {
            silence_threshold_ms: 800.0,
            latency: LatencyModel::default(),
        }
    }
}

impl SttSimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.silence_threshold_ms > 0.0) {
            return Err(Error::Config("silence_threshold_ms must be positive".into()));
        }
        self.latency.validate()
    }

    /// Decision time for speech that ended at `speech_end_s`.
    pub fn decide_at(&self, speech_end_s: f64, rng: &mut impl Rng) -> f64 {
        speech_end_s + self.silence_threshold_ms / 1e3 + self.latency.sample(rng)
    }
}

/// Final-result time of the simulated recognizer: end of the last active
/// frame, plus the trailing-silence threshold, plus a network delay.
pub fn stt_decide(vad: &VadTrack, cfg: &SttSimConfig, rng: &mut impl Rng) -> Result<f64> {
    let last = vad.frames().iter().rposition(|&a| a).ok_or(Error::NoSpeech)?;
    let end = (last + 1) as f64 / vad.frame_rate() as f64;
    Ok(cfg.decide_at(end, rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Vap,
    Stt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnEvent {
    pub turn: usize,
    pub decision_time_s: f64,
    pub true_end_time_s: f64,
    pub source: Source,
    /// `decision_time_s - true_end_time_s`; negative when VAP fired early.
    pub latency_s: f64,
}

/// Earlier decision wins; a tie goes to VAP.
pub fn arbitrate(turn: usize, vap: Option<f64>, stt: f64, true_end_s: f64) -> TurnEvent {
    let (decision_time_s, source) = match vap {
        Some(v) if v <= stt => (v, Source::Vap),
        _ => (stt, Source::Stt),
    };
    TurnEvent {
        turn,
        decision_time_s,
        true_end_time_s: true_end_s,
        source,
        latency_s: decision_time_s - true_end_s,
    }
}

/// Share of events decided by VAP; zero for an empty log.
pub fn vap_source_fraction(events: &[TurnEvent]) -> f64 {
    if events.is_empty() {
        return 0.0;
    }
    events.iter().filter(|e| e.source == Source::Vap).count() as f64 / events.len() as f64
}
