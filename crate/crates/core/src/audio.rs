//! Audio carriers and the small set of signal utilities the rest of the
//! engine is built on: 16 kHz mono waveforms, 10 ms voice-activity label
//! tracks, stereo dialogue pairs and PCM-16 WAV I/O.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
/// Samples per 10 ms label frame.
pub const LABEL_HOP: usize = 160;
pub const LABEL_FRAME_RATE: usize = 100;

/// Mono audio at [`SAMPLE_RATE`] with every sample in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Waveform {
    samples: Vec<f32>,
}

impl Waveform {
    /// Builds a waveform, clamping out-of-range samples into `[-1, 1]`.
    /// Non-finite samples become 0.
    pub fn new(samples: Vec<f32>) -> Self {
        Self::clip(samples).0
    }

    /// Like [`Waveform::new`] but also returns how many samples had to be
    /// clipped.
    pub fn clip(mut samples: Vec<f32>) -> (Self, usize) {
        let mut clipped = 0;
        for s in samples.iter_mut() {
            if !s.is_finite() {
                *s = 0.0;
                clipped += 1;
            } else if *s > 1.0 || *s < -1.0 {
                *s = s.clamp(-1.0, 1.0);
                clipped += 1;
            }
        }
        (Self { samples }, clipped)
    }

    pub fn with_rate(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::UnsupportedSampleRate {
                found: sample_rate,
                expected: SAMPLE_RATE,
            });
        }
        Ok(Self::new(samples))
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            samples: vec![0.0; len],
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }

    /// Number of 10 ms label frames covering this waveform.
    pub fn label_frames(&self) -> usize {
        self.samples.len().div_ceil(LABEL_HOP)
    }

    pub fn scaled(&self, gain: f32) -> (Self, usize) {
        Self::clip(self.samples.iter().map(|s| s * gain).collect())
    }
}

/// Per-10 ms voice activity of one speaker.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VadTrack {
    frames: Vec<bool>,
}

impl VadTrack {
    pub fn new(frames: Vec<bool>) -> Self {
        Self { frames }
    }

    pub fn silent(len: usize) -> Self {
        Self {
            frames: vec![false; len],
        }
    }

    pub fn frames(&self) -> &[bool] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_rate(&self) -> usize {
        LABEL_FRAME_RATE
    }

    pub fn active_count(&self) -> usize {
        self.frames.iter().filter(|&&f| f).count()
    }

    pub fn is_active(&self, frame: usize) -> bool {
        self.frames.get(frame).copied().unwrap_or(false)
    }

    /// Marks frames `[start, end)` active, growing nothing past the track end.
    pub fn set_active(&mut self, start: usize, end: usize) {
        let end = end.min(self.frames.len());
        for f in self.frames.iter_mut().take(end).skip(start) {
            *f = true;
        }
    }

    /// Active regions as half-open frame ranges.
    pub fn segments(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = None;
        for (i, &f) in self.frames.iter().enumerate() {
            match (f, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    out.push((s, i));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push((s, self.frames.len()));
        }
        out
    }

    /// Compact `0`/`1` string form used in label files.
    pub fn to_bit_string(&self) -> String {
        self.frames.iter().map(|&f| if f { '1' } else { '0' }).collect()
    }

    pub fn from_bit_string(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Config(format!("bad VAD label character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::new)
    }
}

/// Two time-aligned channels (user, robot) and their activity labels.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoDialogue {
    pub channel_a: Waveform,
    pub channel_b: Waveform,
    pub vad_a: VadTrack,
    pub vad_b: VadTrack,
}

impl StereoDialogue {
    pub fn new(
        channel_a: Waveform,
        channel_b: Waveform,
        vad_a: VadTrack,
        vad_b: VadTrack,
    ) -> Result<Self> {
        if channel_a.len() != channel_b.len() {
            return Err(Error::Shape(format!(
                "channel lengths differ: {} vs {}",
                channel_a.len(),
                channel_b.len()
            )));
        }
        let frames = channel_a.label_frames();
        if vad_a.len() != frames || vad_b.len() != frames {
            return Err(Error::Shape(format!(
                "VAD tracks ({}, {}) do not match {} label frames",
                vad_a.len(),
                vad_b.len(),
                frames
            )));
        }
        Ok(Self {
            channel_a,
            channel_b,
            vad_a,
            vad_b,
        })
    }

    pub fn len(&self) -> usize {
        self.channel_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channel_a.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.channel_a.duration_s()
    }
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedEncoding {
            path: path.to_path_buf(),
            detail: format!("{:?} {}-bit", spec.sample_format, spec.bits_per_sample),
        });
    }
    if spec.channels != 1 {
        return Err(Error::UnsupportedChannels(spec.channels));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedSampleRate {
            found: spec.sample_rate,
            expected: SAMPLE_RATE,
        });
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Waveform { samples })
}

/// Writes PCM-16 mono. Amplitudes are scaled by 32768 and saturated, so
/// `1.0` is stored as 32767.
pub fn save_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec)?;
    for &s in w.samples() {
        writer.write_sample(quantize(s))?;
    }
    writer.finalize()?;
    Ok(())
}

fn quantize(s: f32) -> i16 {
    (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Mean square of the samples.
pub fn rms_power(w: &Waveform) -> Result<f64> {
    power_of(w.samples())
}

pub(crate) fn power_of(samples: &[f32]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyWaveform);
    }
    Ok(samples.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>() / samples.len() as f64)
}

/// Energy-threshold activity labels: a 10 ms frame is active when its mean
/// square exceeds `threshold_db` (dB re. full-scale mean square 1.0); every
/// detection is then held active for `hangover_ms` more.
///
/// Only used to label synthetic audio, never at inference.
pub fn vad_from_energy(w: &Waveform, threshold_db: f64, hangover_ms: f64) -> Result<VadTrack> {
    if w.is_empty() {
        return Err(Error::EmptyWaveform);
    }
    let threshold = 10f64.powf(threshold_db / 10.0);
    let raw = VadTrack::new(
        w.samples()
            .chunks(LABEL_HOP)
            .map(|frame| power_of(frame).map(|p| p > threshold).unwrap_or(false))
            .collect(),
    );
    let hangover = (hangover_ms.max(0.0) / 10.0).round() as usize;
    Ok(extend_hangover(&raw, &raw, hangover))
}

/// `base` OR (every active frame of `detections` held for `hangover` more
/// frames). Anchoring the extension on the detections keeps the operation
/// idempotent: `extend(extend(b, d, h), d, h) == extend(b, d, h)`.
pub fn extend_hangover(base: &VadTrack, detections: &VadTrack, hangover: usize) -> VadTrack {
    let mut out = base.frames.clone();
    let mut remaining = 0usize;
    for (i, slot) in out.iter_mut().enumerate() {
        if detections.is_active(i) {
            remaining = hangover;
            *slot = true;
        } else if remaining > 0 {
            remaining -= 1;
            *slot = true;
        }
    }
    VadTrack::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn silence_round_trips_and_stores_zero_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zeros.wav");
        save_wav(&Waveform::zeros(16_000), &path).unwrap();
        let back = load_wav(&path).unwrap();
        assert_eq!(back.len(), 16_000);
        assert!((back.duration_s() - 1.0).abs() < 1e-12);
        assert!(back.samples().iter().all(|&s| s == 0.0));
        let bytes = std::fs::read(&path).unwrap();
        // canonical 44-byte header written by hound
        assert!(bytes[44..].iter().all(|&b| b == 0));
    }

    #[test]
    fn saturates_full_scale() {
        assert_eq!(quantize(1.0), 32767);
        assert_eq!(quantize(-1.0), -32768);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("max.wav");
        save_wav(&Waveform::new(vec![1.0; 4]), &path).unwrap();
        let back = load_wav(&path).unwrap();
        assert_eq!(back.samples()[0], 32767.0 / 32768.0);
    }

    #[test]
    fn round_trip_is_within_one_quantization_step() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for i in 0..100 {
            let len = rng.random_range(1..4000);
            let w = Waveform::new((0..len).map(|_| rng.random_range(-1.0..=1.0)).collect());
            let path = dir.path().join(format!("{i}.wav"));
            save_wav(&w, &path).unwrap();
            let back = load_wav(&path).unwrap();
            assert_eq!(back.len(), w.len());
            for (a, b) in w.samples().iter().zip(back.samples()) {
                assert!((a - b).abs() as f64 <= 1.0 / 32768.0 + 1e-9);
            }
        }
    }

    fn write_raw(path: &Path, spec: hound::WavSpec) {
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for _ in 0..10 * spec.channels {
            match spec.sample_format {
                hound::SampleFormat::Int if spec.bits_per_sample == 16 => w.write_sample(0i16).unwrap(),
                hound::SampleFormat::Int => w.write_sample(0i32).unwrap(),
                hound::SampleFormat::Float => w.write_sample(0f32).unwrap(),
            }
        }
        w.finalize().unwrap();
    }

    #[test]
    fn load_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_wav(dir.path().join("nope.wav")),
            Err(Error::MissingFile(_))
        ));
        let base = hound::WavSpec {
            channels: 1,
            sample_rate: SAMPLE_RATE,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let p = dir.path().join("stereo.wav");
        write_raw(&p, hound::WavSpec { channels: 2, ..base });
        assert!(matches!(load_wav(&p), Err(Error::UnsupportedChannels(2))));
        let p = dir.path().join("rate.wav");
        write_raw(&p, hound::WavSpec { sample_rate: 8000, ..base });
        assert!(matches!(
            load_wav(&p),
            Err(Error::UnsupportedSampleRate { found: 8000, .. })
        ));
        let p = dir.path().join("float.wav");
        write_raw(
            &p,
            hound::WavSpec {
                bits_per_sample: 32,
                sample_format: hound::SampleFormat::Float,
                ..base
            },
        );
        assert!(matches!(load_wav(&p), Err(Error::UnsupportedEncoding { .. })));
    }

    #[test]
    fn power_values() {
        assert_eq!(rms_power(&Waveform::new(vec![0.5; 100])).unwrap(), 0.25);
        assert_eq!(rms_power(&Waveform::zeros(100)).unwrap(), 0.0);
        let sine: Vec<f32> = (0..16_000)
            .map(|n| (2.0 * std::f64::consts::PI * 100.0 * n as f64 / 16_000.0).sin() as f32)
            .collect();
        assert!((rms_power(&Waveform::new(sine)).unwrap() - 0.5).abs() < 1e-6);
        assert!(matches!(rms_power(&Waveform::default()), Err(Error::EmptyWaveform)));
    }

    #[test]
    fn rejects_other_rates() {
        assert!(Waveform::with_rate(vec![0.0; 4], 44_100).is_err());
        assert_eq!(Waveform::with_rate(vec![0.0; 4], 16_000).unwrap().sample_rate(), 16_000);
    }

    fn burst() -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = vec![0.0f32; 32_000];
        for x in &mut s[8_000..16_000] {
            *x = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
        Waveform::new(s)
    }

    #[test]
    fn energy_vad_marks_burst_frames() {
        let silent = vad_from_energy(&Waveform::zeros(1600), -50.0, 0.0).unwrap();
        assert_eq!(silent.len(), 10);
        assert_eq!(silent.active_count(), 0);

        let track = vad_from_energy(&burst(), -50.0, 0.0).unwrap();
        assert_eq!(track.len(), 200);
        assert_eq!(track.segments(), vec![(50, 100)]);

        let held = vad_from_energy(&burst(), -50.0, 100.0).unwrap();
        assert_eq!(held.segments(), vec![(50, 110)]);
        assert!(matches!(
            vad_from_energy(&Waveform::default(), -50.0, 0.0),
            Err(Error::EmptyWaveform)
        ));
    }

    #[test]
    fn track_length_is_ceiling_of_duration() {
        let w = Waveform::zeros(161);
        assert_eq!(vad_from_energy(&w, -50.0, 0.0).unwrap().len(), 2);
    }

    #[test]
    fn bit_string_round_trip() {
        let t = VadTrack::new(vec![true, false, false, true]);
        assert_eq!(t.to_bit_string(), "1001");
        assert_eq!(VadTrack::from_bit_string("1001").unwrap(), t);
        assert!(VadTrack::from_bit_string("10x").is_err());
    }

    #[test]
    fn stereo_dialogue_checks_alignment() {
        let w = Waveform::zeros(320);
        let ok = StereoDialogue::new(w.clone(), w.clone(), VadTrack::silent(2), VadTrack::silent(2));
        assert!(ok.is_ok());
        let bad = StereoDialogue::new(w.clone(), Waveform::zeros(10), VadTrack::silent(2), VadTrack::silent(2));
        assert!(bad.is_err());
        let bad = StereoDialogue::new(w.clone(), w, VadTrack::silent(3), VadTrack::silent(2));
        assert!(bad.is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn power_is_scale_quadratic(
                codes in proptest::collection::vec(-16384i32..16384, 1..500),
                m in 1i32..128,
            ) {
                // PCM-grid samples and a dyadic gain keep k*s exact in f32
                let k = m as f32 / 64.0;
                let samples: Vec<f32> = codes.iter().map(|&c| c as f32 / 32768.0).collect();
                let w = Waveform::new(samples.clone());
                let scaled = Waveform::new(samples.iter().map(|s| s * k).collect());
                let p = rms_power(&w).unwrap();
                let ps = rms_power(&scaled).unwrap();
                let expected = (k as f64).powi(2) * p;
                prop_assert!((ps - expected).abs() <= 1e-9 * expected.max(1e-300));
            }

            #[test]
            fn hangover_extension_is_idempotent(
                bits in proptest::collection::vec(any::<bool>(), 0..300),
                hang in 0usize..30,
            ) {
                let raw = VadTrack::new(bits);
                let once = extend_hangover(&raw, &raw, hang);
                let twice = extend_hangover(&once, &raw, hang);
                prop_assert_eq!(once, twice);
            }
        }
    }
}
