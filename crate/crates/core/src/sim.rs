//! Synthetic two-party dialogues with exact labels, and response-time
//! sessions that race the VAP endpointer against the simulated recognizer.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio::{StereoDialogue, VadTrack, Waveform, LABEL_FRAME_RATE, LABEL_HOP, SAMPLE_RATE};
use crate::endpoint::{arbitrate, OnlineVapDetector, Source, SttSimConfig, TurnEvent, VapEndpointerConfig};
use crate::error::{Error, Result};
use crate::model::Parameters;
use crate::noise::item_seed;
use crate::stats::{mann_whitney, summarize, Histogram, RankSumTest, Summary};
use crate::streaming::{stream_signal, FrameResult, TICK_S};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub min: f64,
    pub max: f64,
}

impl Span {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.max > self.min {
            rng.random_range(self.min..self.max)
        } else {
            self.min
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.min >= 0.0 && self.max >= self.min && self.max.is_finite()) {
            return Err(Error::Config(format!("{what}: invalid range [{}, {}]", self.min, self.max)));
        }
        Ok(())
    }
}

/// Normal distribution truncated at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReactionTime {
    pub mean_s: f64,
    pub std_s: f64,
}

impl ReactionTime {
    /// Mean user response with the hybrid system.
    pub const PROPOSED: Self = Self {
        mean_s: 2.35,
        std_s: 0.6,
    };
    /// Mean user response with the recognizer-only baseline.
    pub const BASELINE: Self = Self {
        mean_s: 2.61,
        std_s: 0.6,
    };

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.std_s == 0.0 {
            return self.mean_s.max(0.0);
        }
        Normal::new(self.mean_s, self.std_s)
            .expect("validated std")
            .sample(rng)
            .max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DialogueScript {
    /// User turns, each answered by one robot turn.
    pub n_turns: usize,
    /// Total speech per user turn, pauses excluded.
    pub user_utterance_s: Span,
    pub robot_utterance_s: Span,
    /// Robot turn end to next user onset.
    pub user_reaction_s: ReactionTime,
    /// Pauses inside a user turn.
    pub pause_before_end_s: Span,
    pub max_pauses: usize,
    /// User turn end to robot onset in the recorded dialogue.
    pub robot_gap_s: Span,
    pub lead_in_s: Span,
    pub tail_s: f64,
    pub seed: u64,
}

impl Default for DialogueScript {
    fn default() -> Self {
        Self {
            n_turns: 4,
            user_utterance_s: Span::new(1.5, 3.5),
            robot_utterance_s: Span::new(1.0, 2.5),
            user_reaction_s: ReactionTime::PROPOSED,
            pause_before_end_s: Span::new(0.2, 0.6),
            max_pauses: 2,
            robot_gap_s: Span::new(0.2, 0.7),
            lead_in_s: Span::new(0.5, 1.0),
            tail_s: 2.5,
            seed: 0,
        }
    }
}

impl DialogueScript {
    pub fn validate(&self) -> Result<()> {
        self.user_utterance_s.validate("user_utterance_s")?;
        self.robot_utterance_s.validate("robot_utterance_s")?;
        self.pause_before_end_s.validate("pause_before_end_s")?;
        self.robot_gap_s.validate("robot_gap_s")?;
        self.lead_in_s.validate("lead_in_s")?;
        if self.n_turns > 0 && (self.user_utterance_s.min <= 0.0 || self.robot_utterance_s.min <= 0.0) {
            return Err(Error::Config("utterance durations must be positive".into()));
        }
        if !(self.user_reaction_s.mean_s >= 0.0 && self.user_reaction_s.std_s >= 0.0) {
            return Err(Error::Config("user_reaction_s must be non-negative".into()));
        }
        if !(self.tail_s >= 0.0) {
            return Err(Error::Config("tail_s must be non-negative".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// Speech level (RMS) before per-turn gain.
const SPEECH_RMS: f64 = 0.1;
/// Syllable rate of the amplitude modulation.
const SYLLABLE_HZ: f64 = 4.0;
/// Length of the falling, darkening ending of every turn.
const FINAL_FALL_S: f64 = 0.5;
const FINAL_LEVEL: f64 = 0.3;
const MIN_PHRASE_S: f64 = 0.3;

/// Labels are snapped to 10 ms so every label frame is fully on or off.
fn snap(t: f64) -> usize {
    (t * LABEL_FRAME_RATE as f64).round() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Voice {
    User,
    Robot,
}

/// Spectrally tilted noise: the user is dark (two-pole low-pass), the
/// robot bright (first difference plus some white).
fn carrier(voice: Voice, darker: bool, rng: &mut impl Rng, len: usize) -> Vec<f64> {
    let (mut l1, mut l2, mut prev) = (0.0, 0.0, 0.0);
    let a = match (voice, darker) {
        (Voice::User, false) => 0.85,
        (Voice::User, true) => 0.95,
        (Voice::Robot, false) => 0.3,
        (Voice::Robot, true) => 0.7,
    };
    let mut out: Vec<f64> = (0..len)
        .map(|_| {
            let w: f64 = rng.random_range(-1.0..1.0);
            l1 = a * l1 + (1.0 - a) * w;
            l2 = a * l2 + (1.0 - a) * l1;
            let y = match voice {
                Voice::User => l2,
                Voice::Robot => 0.7 * (l2 - prev) + 0.3 * w,
            };
            prev = l2;
            y
        })
        .collect();
    let rms = (out.iter().map(|x| x * x).sum::<f64>() / len.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|x| *x /= rms);
    }
    out
}

/// Writes one phrase over label frames `[start, end)`; `final_phrase` adds
/// the turn-ending fall.
fn render_phrase(buf: &mut [f32], voice: Voice, start: usize, end: usize, final_phrase: bool, gain: f64, rng: &mut impl Rng) {
    let (s0, s1) = (start * LABEL_HOP, end * LABEL_HOP);
    let len = s1 - s0;
    let bright = carrier(voice, false, rng, len);
    let dark = carrier(voice, true, rng, len);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let fall_len = (FINAL_FALL_S * SAMPLE_RATE as f64) as usize;
    // modulation mean square is 0.6^2 + 0.4^2 / 2
    let norm = SPEECH_RMS * gain / 0.44f64.sqrt();
    for i in 0..len {
        let t = i as f64 / SAMPLE_RATE as f64;
        let env = 0.6 + 0.4 * (std::f64::consts::TAU * SYLLABLE_HZ * t + phase).sin();
        let (level, mix) = if final_phrase && i + fall_len > len {
            let x = (i + fall_len - len) as f64 / fall_len as f64;
            (1.0 - (1.0 - FINAL_LEVEL) * x, x)
        } else {
            (1.0, 0.0)
        };
        let c = (1.0 - mix) * bright[i] + mix * dark[i];
        buf[s0 + i] = (norm * env * level * c) as f32;
    }
}

/// Renders `script` to clean audio with exact labels. Channel A is the
/// user, channel B the robot.
pub fn generate_dialogue(script: &DialogueScript) -> Result<StereoDialogue> {
    script.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(script.seed);
    // (voice, start frame, end frame, is final phrase, gain)
    let mut phrases: Vec<(Voice, usize, usize, bool, f64)> = Vec::new();
    let mut t = if script.n_turns == 0 {
        0
    } else {
        snap(script.lead_in_s.sample(&mut rng))
    };
    for turn in 0..script.n_turns {
        let total = script.user_utterance_s.sample(&mut rng);
        let gain = rng.random_range(0.7..1.3);
        let n_phrases = 1 + rng.random_range(0..=script.max_pauses);
        let n_phrases = n_phrases.min((total / MIN_PHRASE_S).floor().max(1.0) as usize);
        // split the speech into phrases of at least MIN_PHRASE_S
        let spare = total - MIN_PHRASE_S * n_phrases as f64;
        let mut cuts: Vec<f64> = (0..n_phrases - 1).map(|_| rng.random_range(0.0..=spare.max(0.0))).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.insert(0, 0.0);
        cuts.push(spare.max(0.0));
        for p in 0..n_phrases {
            let dur = MIN_PHRASE_S + cuts[p + 1] - cuts[p];
            let end = t + snap(dur).max(1);
            phrases.push((Voice::User, t, end, p + 1 == n_phrases, gain));
            t = end;
            if p + 1 < n_phrases {
                t += snap(script.pause_before_end_s.sample(&mut rng)).max(1);
            }
        }
        t += snap(script.robot_gap_s.sample(&mut rng)).max(1);
        let end = t + snap(script.robot_utterance_s.sample(&mut rng)).max(1);
        phrases.push((Voice::Robot, t, end, true, rng.random_range(0.7..1.3)));
        t = end;
        if turn + 1 < script.n_turns {
            t += snap(script.user_reaction_s.sample(&mut rng)).max(1);
        }
    }
    let frames = t + snap(script.tail_s);
    let mut a = vec![0.0f32; frames * LABEL_HOP];
    let mut b = vec![0.0f32; frames * LABEL_HOP];
    let mut vad_a = VadTrack::silent(frames);
    let mut vad_b = VadTrack::silent(frames);
    for &(voice, start, end, last, gain) in &phrases {
        let (buf, vad) = match voice {
            Voice::User => (&mut a, &mut vad_a),
            Voice::Robot => (&mut b, &mut vad_b),
        };
        render_phrase(buf, voice, start, end, last, gain, &mut rng);
        vad.set_active(start, end);
    }
    StereoDialogue::new(Waveform::new(a), Waveform::new(b), vad_a, vad_b)
}

/// One user turn recovered from the labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTurn {
    pub index: usize,
    pub start_s: f64,
    /// End of the last user speech before the robot answers.
    pub end_s: f64,
    /// Speech segments of the turn, in seconds.
    pub segments: Vec<(f64, f64)>,
    pub robot_start_s: Option<f64>,
    pub robot_end_s: Option<f64>,
    pub next_start_s: Option<f64>,
}

impl UserTurn {
    /// Scripted robot-end to next-user-onset gap.
    pub fn user_response_s(&self) -> Option<f64> {
        Some(self.next_start_s? - self.robot_end_s?)
    }

    /// End of the user speech delivered by time `t`: `t` itself inside a
    /// segment, otherwise the end of the last segment before `t`.
    pub fn delivered_end(&self, t: f64) -> f64 {
        let mut end = self.start_s;
        for &(s, e) in &self.segments {
            if s >= t {
                break;
            }
            end = e.min(t);
        }
        end
    }
}

/// Groups user speech into turns separated by robot speech.
pub fn user_turns(d: &StereoDialogue) -> Vec<UserTurn> {
    let rate = LABEL_FRAME_RATE as f64;
    let to_s = |(s, e): (usize, usize)| (s as f64 / rate, e as f64 / rate);
    let user: Vec<(f64, f64)> = d.vad_a.segments().into_iter().map(to_s).collect();
    let robot: Vec<(f64, f64)> = d.vad_b.segments().into_iter().map(to_s).collect();
    let mut groups: Vec<Vec<(f64, f64)>> = Vec::new();
    for seg in user {
        let split = match groups.last().and_then(|g| g.last()) {
            None => true,
            Some(&(_, prev_end)) => robot.iter().any(|&(rs, _)| rs >= prev_end && rs < seg.0),
        };
        if split {
            groups.push(vec![seg]);
        } else {
            groups.last_mut().expect("non-empty").push(seg);
        }
    }
    let starts: Vec<f64> = groups.iter().map(|g| g[0].0).collect();
    groups
        .into_iter()
        .enumerate()
        .map(|(index, segments)| {
            let end_s = segments.last().expect("non-empty").1;
            let next_start_s = starts.get(index + 1).copied();
            let reply = robot
                .iter()
                .find(|&&(rs, _)| rs >= end_s && next_start_s.is_none_or(|n| rs < n));
            UserTurn {
                index,
                start_s: segments[0].0,
                end_s,
                segments,
                robot_start_s: reply.map(|r| r.0),
                robot_end_s: reply.map(|r| r.1),
                next_start_s,
            }
        })
        .collect()
}

/// Label-derived stand-in for a perfect model: the robot holds the near
/// future exactly when the user is silent over the current hop and the
/// next 600 ms.
pub fn oracle_frames(d: &StereoDialogue) -> Vec<FrameResult> {
    let per_hop = LABEL_FRAME_RATE / 10;
    let n = d.vad_a.len() / per_hop;
    (1..=n)
        .map(|j| {
            let hop = (j - 1) * per_hop..j * per_hop;
            let ahead = j * per_hop..(j * per_hop + 60).min(d.vad_a.len());
            let user_hop = hop.clone().filter(|&f| d.vad_a.is_active(f)).count();
            let silent = user_hop == 0 && ahead.clone().all(|f| !d.vad_a.is_active(f));
            let p_robot = if silent { 1.0 } else { 0.0 };
            FrameResult {
                frame_index: j as u64,
                timestamp_s: j as f64 * TICK_S,
                p_now_user: 1.0 - p_robot,
                p_now_robot: p_robot,
                vad: [
                    if 2 * user_hop > per_hop { 1.0 } else { 0.0 },
                    0.0,
                ],
                vap_entropy: 0.0,
                compute_ms: 0.0,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    VapOnly,
    SttOnly,
    Hybrid,
}

impl Policy {
    pub fn uses_vap(self) -> bool {
        self != Policy::SttOnly
    }

    pub fn name(self) -> &'static str {
        match self {
            Policy::VapOnly => "vap-only",
            Policy::SttOnly => "stt-only",
            Policy::Hybrid => "hybrid",
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vap-only" | "vap" => Ok(Policy::VapOnly),
            "stt-only" | "stt" => Ok(Policy::SttOnly),
            "hybrid" => Ok(Policy::Hybrid),
            other => Err(Error::Config(format!("unknown policy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub vap: VapEndpointerConfig,
    pub stt: SttSimConfig,
    /// Decision to robot speech onset.
    pub response_delay_s: f64,
    /// Seeds the per-turn network delays, shared by all policies.
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            vap: VapEndpointerConfig::default(),
            stt: SttSimConfig::default(),
            response_delay_s: 0.3,
            seed: 0,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        self.vap.validate()?;
        self.stt.validate()?;
        if !(self.response_delay_s >= 0.0) {
            return Err(Error::Config("response_delay_s must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseTimeRecord {
    pub dialogue: String,
    pub turn: usize,
    pub policy: Policy,
    /// User speech end to robot speech onset.
    pub robot_response_s: f64,
    /// Robot turn end to next user onset; absent after the last turn.
    pub user_response_s: Option<f64>,
    pub source: Source,
    pub true_end_s: f64,
    /// Where the user was cut off when the robot answered mid-turn.
    pub delivered_end_s: f64,
    pub truncated: bool,
    pub decision_time_s: f64,
    pub robot_onset_s: f64,
    /// Decision to onset, the recognizer-result clock.
    pub response_from_decision_s: f64,
}

impl ResponseTimeRecord {
    pub const CSV_HEADER: &'static str = "dialogue,turn,policy,robot_response_s,user_response_s,source,true_end_s,delivered_end_s,truncated,decision_time_s,robot_onset_s,response_from_decision_s";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.4},{},{},{:.4},{:.4},{},{:.4},{:.4},{:.4}",
            self.dialogue,
            self.turn,
            self.policy.name(),
            self.robot_response_s,
            self.user_response_s.map(|v| format!("{v:.4}")).unwrap_or_default(),
            match self.source {
                Source::Vap => "vap",
                Source::Stt => "stt",
            },
            self.true_end_s,
            self.delivered_end_s,
            self.truncated,
            self.decision_time_s,
            self.robot_onset_s,
            self.response_from_decision_s
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SessionOutcome {
    pub records: Vec<ResponseTimeRecord>,
    pub events: Vec<TurnEvent>,
    /// Turns the VAP-only policy never answered.
    pub missed_turns: usize,
}

impl SessionOutcome {
    pub fn extend(&mut self, other: SessionOutcome) {
        self.records.extend(other.records);
        self.events.extend(other.events);
        self.missed_turns += other.missed_turns;
    }
}

/// Streams the user channel (robot channel silent, as deployed) and scores
/// every user turn under `policy`.
pub fn run_session(
    dialogue_id: &str,
    dialogue: &StereoDialogue,
    policy: Policy,
    params: Option<Arc<Parameters>>,
    cfg: &SessionConfig,
) -> Result<SessionOutcome> {
    let frames = match (policy.uses_vap(), params) {
        (false, _) => None,
        (true, None) => return Err(Error::MissingModel(policy.name())),
        (true, Some(p)) => Some(stream_signal(p, dialogue.channel_a.samples(), None)?),
    };
    score_session(dialogue_id, dialogue, frames.as_deref(), policy, cfg)
}

/// Scores a session from precomputed frames, so one stream can serve every
/// policy.
pub fn score_session(
    dialogue_id: &str,
    dialogue: &StereoDialogue,
    frames: Option<&[FrameResult]>,
    policy: Policy,
    cfg: &SessionConfig,
) -> Result<SessionOutcome> {
    cfg.validate()?;
    if policy.uses_vap() && frames.is_none() {
        return Err(Error::MissingModel(policy.name()));
    }
    let mut out = SessionOutcome::default();
    for turn in user_turns(dialogue) {
        let vap = match frames {
            Some(frames) if policy.uses_vap() => {
                let limit = turn.next_start_s.unwrap_or(f64::INFINITY);
                let mut det = OnlineVapDetector::new(cfg.vap.clone());
                frames
                    .iter()
                    .filter(|f| f.timestamp_s > turn.start_s + 1e-9 && f.timestamp_s <= limit + 1e-9)
                    .find_map(|f| det.feed(f))
            }
            _ => None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(item_seed(cfg.seed, dialogue_id, turn.index as u64));
        let stt = cfg.stt.decide_at(turn.end_s, &mut rng);
        let event = match policy {
            Policy::SttOnly => arbitrate(turn.index, None, stt, turn.end_s),
            Policy::Hybrid => arbitrate(turn.index, vap, stt, turn.end_s),
            Policy::VapOnly => match vap {
                Some(v) => arbitrate(turn.index, Some(v), f64::INFINITY, turn.end_s),
                None => {
                    out.missed_turns += 1;
                    continue;
                }
            },
        };
        let delivered = turn.delivered_end(event.decision_time_s);
        let onset = event.decision_time_s + cfg.response_delay_s;
        out.records.push(ResponseTimeRecord {
            dialogue: dialogue_id.to_string(),
            turn: turn.index,
            policy,
            robot_response_s: onset - delivered,
            user_response_s: turn.user_response_s(),
            source: event.source,
            true_end_s: turn.end_s,
            delivered_end_s: delivered,
            truncated: delivered < turn.end_s,
            decision_time_s: event.decision_time_s,
            robot_onset_s: onset,
            response_from_decision_s: cfg.response_delay_s,
        });
        out.events.push(event);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub policy: Policy,
    pub turns: usize,
    pub missed_turns: usize,
    /// Absent when the policy answered no turn.
    pub robot_response: Option<Summary>,
    pub user_response: Option<Summary>,
    /// Robot response over VAP-decided turns only.
    pub vap_decided: Option<Summary>,
    pub robot_histogram: Histogram,
    pub user_histogram: Histogram,
    pub vap_source_fraction: f64,
    pub truncated_turns: usize,
}

pub fn session_stats(policy: Policy, outcome: &SessionOutcome) -> SessionStats {
    let robot: Vec<f64> = outcome.records.iter().map(|r| r.robot_response_s).collect();
    let user: Vec<f64> = outcome.records.iter().filter_map(|r| r.user_response_s).collect();
    let vap: Vec<f64> = outcome
        .records
        .iter()
        .filter(|r| r.source == Source::Vap)
        .map(|r| r.robot_response_s)
        .collect();
    SessionStats {
        policy,
        turns: outcome.records.len(),
        missed_turns: outcome.missed_turns,
        robot_response: summarize(&robot).ok(),
        user_response: summarize(&user).ok(),
        vap_decided: summarize(&vap).ok(),
        robot_histogram: Histogram::response_times(&robot),
        user_histogram: Histogram::response_times(&user),
        vap_source_fraction: crate::endpoint::vap_source_fraction(&outcome.events),
        truncated_turns: outcome.records.iter().filter(|r| r.truncated).count(),
    }
}

/// Rank-sum comparison of robot response times between two sessions.
pub fn compare_sessions(a: &SessionOutcome, b: &SessionOutcome) -> Result<RankSumTest> {
    let xs: Vec<f64> = a.records.iter().map(|r| r.robot_response_s).collect();
    let ys: Vec<f64> = b.records.iter().map(|r| r.robot_response_s).collect();
    mann_whitney(&xs, &ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::vad_from_energy;
    use crate::endpoint::LatencyModel;

    fn script(seed: u64) -> DialogueScript {
        DialogueScript {
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn empty_script_is_silent() {
        let d = generate_dialogue(&DialogueScript {
            n_turns: 0,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(d.vad_a.active_count() + d.vad_b.active_count(), 0);
        assert!(d.channel_a.samples().iter().all(|&x| x == 0.0));
        assert!(user_turns(&d).is_empty());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_dialogue(&script(5)).unwrap();
        let b = generate_dialogue(&script(5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_dialogue(&script(6)).unwrap());
    }

    #[test]
    fn labels_agree_with_energy_detection() {
        for seed in 0..5 {
            let d = generate_dialogue(&script(seed)).unwrap();
            for (w, labels) in [(&d.channel_a, &d.vad_a), (&d.channel_b, &d.vad_b)] {
                let det = vad_from_energy(w, -50.0, 0.0).unwrap();
                let agree = det
                    .frames()
                    .iter()
                    .zip(labels.frames())
                    .filter(|(x, y)| x == y)
                    .count();
                assert!(agree as f64 / labels.len() as f64 >= 0.99);
            }
        }
    }

    #[test]
    fn turn_structure() {
        let s = script(2);
        let d = generate_dialogue(&s).unwrap();
        let turns = user_turns(&d);
        assert_eq!(turns.len(), s.n_turns);
        for t in &turns {
            let (rs, re) = (t.robot_start_s.unwrap(), t.robot_end_s.unwrap());
            let gap = rs - t.end_s;
            assert!(gap >= 0.2 - 1e-9 && gap <= 0.7 + 1e-9);
            assert!(re > rs);
            for w in t.segments.windows(2) {
                let pause = w[1].0 - w[0].1;
                assert!((0.2 - 1e-9..=0.6 + 1e-9).contains(&pause));
            }
        }
        assert!(turns.last().unwrap().user_response_s().is_none());
        assert!(turns[0].user_response_s().unwrap() >= 0.0);
        assert_eq!(d.vad_a.frames().iter().zip(d.vad_b.frames()).filter(|(a, b)| **a && **b).count(), 0);
    }

    #[test]
    fn delivered_end_cuts_at_decision() {
        let t = UserTurn {
            index: 0,
            start_s: 1.0,
            end_s: 3.0,
            segments: vec![(1.0, 1.5), (2.0, 3.0)],
            robot_start_s: None,
            robot_end_s: None,
            next_start_s: None,
        };
        assert_eq!(t.delivered_end(1.2), 1.2);
        assert_eq!(t.delivered_end(1.8), 1.5);
        assert_eq!(t.delivered_end(2.5), 2.5);
        assert_eq!(t.delivered_end(4.0), 3.0);
    }

    fn zero_delay() -> SessionConfig {
        SessionConfig {
            stt: SttSimConfig {
                silence_threshold_ms: 800.0,
                latency: LatencyModel::constant(0.0),
            },
            ..Default::default()
        }
    }

    #[test]
    fn stt_only_zero_delay_is_exact() {
        let d = generate_dialogue(&script(3)).unwrap();
        let out = run_session("d", &d, Policy::SttOnly, None, &zero_delay()).unwrap();
        assert_eq!(out.records.len(), 4);
        for r in &out.records {
            assert!((r.robot_response_s - 1.1).abs() < 1e-9);
            assert_eq!(r.source, Source::Stt);
        }
        assert!(matches!(
            run_session("d", &d, Policy::Hybrid, None, &zero_delay()),
            Err(Error::MissingModel(_))
        ));
    }

    /// Turns on the 100 ms grid so the oracle's first silent hop starts
    /// exactly at the true end.
    fn grid_dialogue() -> StereoDialogue {
        let frames = 2000;
        let mut a = VadTrack::silent(frames);
        let mut b = VadTrack::silent(frames);
        for (us, ue, rs, re) in [(100, 400, 450, 700), (900, 1300, 1350, 1600)] {
            a.set_active(us, ue - 50);
            a.set_active(ue - 20, ue);
            b.set_active(rs, re);
        }
        let w = Waveform::zeros(frames * LABEL_HOP);
        StereoDialogue::new(w.clone(), w, a, b).unwrap()
    }

    #[test]
    fn oracle_hybrid_answers_k_hops_after_the_end() {
        let d = grid_dialogue();
        let frames = oracle_frames(&d);
        let cfg = SessionConfig::default();
        let out = score_session("g", &d, Some(&frames), Policy::Hybrid, &cfg).unwrap();
        assert_eq!(out.records.len(), 2);
        for r in &out.records {
            assert_eq!(r.source, Source::Vap);
            assert!(!r.truncated);
            let expected = cfg.vap.consecutive_k as f64 * 0.1 + 0.3;
            assert!((r.robot_response_s - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn hybrid_dominates_stt_and_disabled_vap_falls_back() {
        let d = generate_dialogue(&script(4)).unwrap();
        let frames = oracle_frames(&d);
        let cfg = SessionConfig::default();
        let stt = score_session("x", &d, Some(&frames), Policy::SttOnly, &cfg).unwrap();
        let hyb = score_session("x", &d, Some(&frames), Policy::Hybrid, &cfg).unwrap();
        for (s, h) in stt.records.iter().zip(&hyb.records) {
            assert!(h.robot_response_s <= s.robot_response_s);
        }
        let off = SessionConfig {
            vap: VapEndpointerConfig {
                enabled: false,
                ..Default::default()
            },
            ..cfg.clone()
        };
        let fb = score_session("x", &d, Some(&frames), Policy::Hybrid, &off).unwrap();
        assert_eq!(fb.records.len(), 4);
        assert!(fb.events.iter().all(|e| e.source == Source::Stt));
        assert_eq!(fb.records, {
            let mut r = stt.records.clone();
            r.iter_mut().for_each(|x| x.policy = Policy::Hybrid);
            r
        });
        let vap_only = score_session("x", &d, Some(&frames), Policy::VapOnly, &off).unwrap();
        assert_eq!(vap_only.missed_turns, 4);
    }

    #[test]
    fn records_serialize() {
        let d = generate_dialogue(&script(1)).unwrap();
        let out = run_session("d1", &d, Policy::SttOnly, None, &SessionConfig::default()).unwrap();
        let stats = session_stats(Policy::SttOnly, &out);
        assert_eq!(stats.turns, 4);
        assert_eq!(stats.vap_source_fraction, 0.0);
        let row = out.records[0].csv_row();
        assert_eq!(row.split(',').count(), ResponseTimeRecord::CSV_HEADER.split(',').count());
        let json = serde_json::to_string(&out.records[0]).unwrap();
        assert!(json.contains("\"policy\":\"stt-only\""));
    }
}
