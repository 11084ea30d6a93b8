//! Multi-condition augmentation: exact-SNR noise superposition, random
//! condition draws and the deterministic 8:1:1 dataset split.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{load_wav, power_of, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

/// SNR levels used for multi-condition training and per-level evaluation.
pub const TRAINING_SNRS_DB: [f64; 4] = [5.0, 10.0, 15.0, 20.0];

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseClip {
    pub name: String,
    pub waveform: Waveform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBank {
    entries: Vec<NoiseClip>,
}

impl NoiseBank {
    pub fn new(entries: Vec<NoiseClip>) -> Result<Self> {
        if let Some(short) = entries.iter().find(|e| e.waveform.len() < SAMPLE_RATE as usize) {
            return Err(Error::ShortNoiseClip(short.name.clone()));
        }
        Ok(Self { entries })
    }

    /// Every `*.wav` in `dir`, sorted by file name; the stem becomes the
    /// noise name.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(Error::MissingFile(dir.to_path_buf()));
        }
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        paths.sort();
        let entries = paths
            .iter()
            .map(|p| {
                Ok(NoiseClip {
                    name: p.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
                    waveform: load_wav(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries)
    }

    /// A stand-in for recorded ambient noise: stationary colored noises,
    /// mains hum, modulated traffic rumble and multi-talker babble.
    pub fn synthetic(seed: u64, clip_s: f64) -> Self {
        let len = (clip_s.max(1.0) * SAMPLE_RATE as f64) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = ["white", "pink", "brown", "hum", "traffic", "babble"]
            .iter()
            .map(|&name| {
                let raw = synth_noise(name, len, &mut rng);
                NoiseClip {
                    name: name.to_string(),
                    waveform: normalize_to_rms(raw, 0.05),
                }
            })
            .collect();
        Self { entries }
    }

    pub fn entries(&self) -> &[NoiseClip] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&NoiseClip> {
        self.entries.iter().find(|e| e.name == name)
    }
}

fn normalize_to_rms(samples: Vec<f64>, target: f64) -> Waveform {
    let p = samples.iter().map(|s| s * s).sum::<f64>() / samples.len().max(1) as f64;
    let g = if p > 0.0 { target / p.sqrt() } else { 0.0 };
    Waveform::new(samples.iter().map(|s| (s * g) as f32).collect())
}

fn synth_noise(kind: &str, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let mut white = || rng.random::<f64>() * 2.0 - 1.0;
    match kind {
        "white" => (0..len).map(|_| white()).collect(),
        "pink" => {
            // Kellet's economy pink filter
            let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
            (0..len)
                .map(|_| {
                    let w = white();
                    b0 = 0.99765 * b0 + w * 0.0990460;
                    b1 = 0.96300 * b1 + w * 0.2965164;
                    b2 = 0.57000 * b2 + w * 1.0526913;
                    b0 + b1 + b2 + w * 0.1848
                })
                .collect()
        }
        "brown" => {
            let mut acc = 0.0;
            (0..len)
                .map(|_| {
                    acc = 0.995 * acc + 0.1 * white();
                    acc
                })
                .collect()
        }
        "hum" => (0..len)
            .map(|n| {
                let t = n as f64 / sr;
                let tau = std::f64::consts::TAU;
                (tau * 50.0 * t).sin() + 0.5 * (tau * 100.0 * t).sin() + 0.3 * (tau * 150.0 * t).sin()
                    + 0.2 * white()
            })
            .collect(),
        "traffic" => {
            let mut lp = 0.0;
            (0..len)
                .map(|n| {
                    let t = n as f64 / sr;
                    lp = 0.98 * lp + 0.02 * white();
                    lp * (1.0 + 0.6 * (std::f64::consts::TAU * 0.3 * t).sin())
                })
                .collect()
        }
        _ => babble(len, rng),
    }
}

/// Overlapping talkers made of syllable-rate modulated, tilted noise.
fn babble(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let mut out = vec![0.0; len];
    for _ in 0..6 {
        let alpha: f64 = rng.random_range(0.3..0.95);
        let rate: f64 = rng.random_range(3.0..6.0);
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let mut lp = 0.0;
        let mut on = rng.random::<bool>();
        let mut left = 0usize;
        for (n, o) in out.iter_mut().enumerate() {
            if left == 0 {
                on = !on;
                left = (rng.random_range(0.3..1.5) * sr) as usize;
            }
            left -= 1;
            let w = rng.random::<f64>() * 2.0 - 1.0;
            lp = alpha * lp + (1.0 - alpha) * w;
            if on {
                let t = n as f64 / sr;
                *o += lp * (0.6 + 0.4 * (std::f64::consts::TAU * rate * t + phase).sin());
            }
        }
    }
    out
}

/// Target SNR of one augmentation draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SnrLevel {
    Db(f64),
    #[serde(with = "clean_tag")]
    Clean,
}

mod clean_tag {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("clean")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s.eq_ignore_ascii_case("clean") {
            Ok(())
        } else {
            Err(serde::de::Error::custom(format!("expected \"clean\", got {s:?}")))
        }
    }
}

impl SnrLevel {
    pub fn db(self) -> Option<f64> {
        match self {
            SnrLevel::Db(v) => Some(v),
            SnrLevel::Clean => None,
        }
    }

    /// The evaluation rows, clean first then decreasing SNR.
    pub fn evaluation_levels() -> Vec<SnrLevel> {
        let mut v = vec![SnrLevel::Clean];
        v.extend(TRAINING_SNRS_DB.iter().rev().map(|&d| SnrLevel::Db(d)));
        v
    }
}

impl fmt::Display for SnrLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SnrLevel::Clean => f.write_str("clean"),
            SnrLevel::Db(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub noise_name: String,
    pub snr: SnrLevel,
}

impl Condition {
    pub fn clean() -> Self {
        Self {
            noise_name: "none".into(),
            snr: SnrLevel::Clean,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mixture {
    pub waveform: Waveform,
    /// Linear gain applied to the noise.
    pub gain: f64,
    pub clipped: usize,
    pub noise_offset: usize,
}

/// `noise` repeated from `offset` until it covers `len` samples.
pub fn tile_noise(noise: &Waveform, len: usize, offset: usize) -> Vec<f32> {
    let src = noise.samples();
    if src.is_empty() {
        return vec![0.0; len];
    }
    src.iter().cycle().skip(offset % src.len()).take(len).copied().collect()
}

/// Adds `noise` to `signal` so that the signal-to-scaled-noise power ratio
/// equals `snr_db`. The noise is tiled from sample 0. `+inf` returns the
/// signal unchanged.
pub fn mix_at_snr(signal: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Mixture> {
    mix_at_snr_with_offset(signal, noise, snr_db, 0)
}

pub fn mix_at_snr_with_offset(
    signal: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    offset: usize,
) -> Result<Mixture> {
    if snr_db == f64::INFINITY {
        return Ok(Mixture {
            waveform: signal.clone(),
            gain: 0.0,
            clipped: 0,
            noise_offset: 0,
        });
    }
    let p_sig = power_of(signal.samples())?;
    if p_sig <= 0.0 {
        return Err(Error::SilentInput("signal"));
    }
    if noise.is_empty() {
        return Err(Error::SilentInput("noise"));
    }
    let tiled = tile_noise(noise, signal.len(), offset);
    let p_noise = power_of(&tiled)?;
    if p_noise <= 0.0 {
        return Err(Error::SilentInput("noise"));
    }
    let gain = (p_sig / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let mixed: Vec<f32> = signal
        .samples()
        .iter()
        .zip(&tiled)
        .map(|(&s, &n)| (s as f64 + gain * n as f64) as f32)
        .collect();
    let (waveform, clipped) = Waveform::clip(mixed);
    Ok(Mixture {
        waveform,
        gain,
        clipped,
        noise_offset: offset % noise.len(),
    })
}

/// Applies `condition` to `signal` with a random tiling offset. Clean
/// conditions and silent signals pass through untouched.
pub fn apply_condition(
    signal: &Waveform,
    bank: &NoiseBank,
    condition: &Condition,
    rng: &mut impl Rng,
) -> Result<Mixture> {
    let passthrough = || Mixture {
        waveform: signal.clone(),
        gain: 0.0,
        clipped: 0,
        noise_offset: 0,
    };
    let Some(db) = condition.snr.db() else {
        return Ok(passthrough());
    };
    let clip = bank
        .get(&condition.noise_name)
        .ok_or_else(|| Error::Config(format!("unknown noise '{}'", condition.noise_name)))?;
    if signal.is_empty() || power_of(signal.samples())? == 0.0 {
        return Ok(passthrough());
    }
    let offset = rng.random_range(0..clip.waveform.len());
    mix_at_snr_with_offset(signal, &clip.waveform, db, offset)
}

/// Uniform, independent draw of a noise entry and an SNR level.
pub fn sample_condition(
    rng: &mut impl Rng,
    bank: &NoiseBank,
    snr_set: &[SnrLevel],
) -> Result<Condition> {
    if bank.is_empty() {
        return Err(Error::EmptyNoiseBank);
    }
    if snr_set.is_empty() {
        return Err(Error::EmptySnrSet);
    }
    let noise = &bank.entries[rng.random_range(0..bank.len())];
    let snr = snr_set[rng.random_range(0..snr_set.len())];
    Ok(Condition {
        noise_name: noise.name.clone(),
        snr,
    })
}

/// Multi-condition policy: clean with probability `clean_prob`, otherwise a
/// uniform draw from `snr_db`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiCondition {
    pub snr_db: Vec<f64>,
    pub clean_prob: f64,
}

impl Default for MultiCondition {
    fn default() -> Self {
        Self {
            snr_db: TRAINING_SNRS_DB.to_vec(),
            clean_prob: 0.2,
        }
    }
}

impl MultiCondition {
    pub fn sample(&self, rng: &mut impl Rng, bank: &NoiseBank) -> Result<Condition> {
        if !(0.0..=1.0).contains(&self.clean_prob) {
            return Err(Error::Config(format!("clean_prob {} outside [0, 1]", self.clean_prob)));
        }
        let levels: Vec<SnrLevel> = self.snr_db.iter().map(|&d| SnrLevel::Db(d)).collect();
        if rng.random::<f64>() < self.clean_prob {
            // keep the stream of draws aligned with the noisy branch
            let _ = sample_condition(rng, bank, &levels)?;
            return Ok(Condition::clean());
        }
        sample_condition(rng, bank, &levels)
    }
}

/// One applied augmentation, as written to the conditions manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRecord {
    pub item_id: String,
    pub noise_name: String,
    pub snr_db: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffles under `seed` and cuts 80% / 10% / remainder.
pub fn split_dataset(items: &[String], seed: u64) -> Result<DatasetSplit> {
    if items.len() < 10 {
        return Err(Error::TooFewItems {
            needed: 10,
            got: items.len(),
        });
    }
    let n = items.len() as f64;
    let n_train = (0.8 * n).round() as usize;
    let n_valid = (0.1 * n).round() as usize;
    let mut shuffled = items.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = shuffled.split_off(n_train + n_valid);
    let valid = shuffled.split_off(n_train);
    Ok(DatasetSplit {
        train: shuffled,
        valid,
        test,
    })
}

/// Stable per-item seed derived from a global seed, an item id and a salt
/// (e.g. the epoch), so augmentation can run in any order.
pub fn item_seed(global: u64, item_id: &str, salt: u64) -> u64 {
    // FNV-1a, then a splitmix finalizer
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in item_id.bytes().chain(global.to_le_bytes()).chain(salt.to_le_bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_wave(rng: &mut ChaCha8Rng, len: usize, amp: f32) -> Waveform {
        Waveform::new((0..len).map(|_| rng.random_range(-amp..amp)).collect())
    }

    fn measured_snr(signal: &Waveform, noise: &Waveform, gain: f64, offset: usize) -> f64 {
        let p_sig = power_of(signal.samples()).unwrap();
        let scaled: Vec<f64> = tile_noise(noise, signal.len(), offset)
            .iter()
            .map(|&n| gain * n as f64)
            .collect();
        let p_noise = scaled.iter().map(|x| x * x).sum::<f64>() / scaled.len() as f64;
        10.0 * (p_sig / p_noise).log10()
    }

    #[test]
    fn equal_power_at_zero_db_has_unit_gain() {
        let s = Waveform::new(vec![0.25, -0.25, 0.25, -0.25]);
        let n = Waveform::new(vec![-0.25, 0.25, 0.25, -0.25]);
        let m = mix_at_snr(&s, &n, 0.0).unwrap();
        assert!((m.gain - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clean_condition_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_wave(&mut rng, 1000, 0.3);
        let n = random_wave(&mut rng, 500, 0.3);
        let m = mix_at_snr(&s, &n, f64::INFINITY).unwrap();
        assert_eq!(m.waveform, s);
    }

    #[test]
    fn hits_target_snr() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let s = random_wave(&mut rng, 4000, 0.3);
            let n = random_wave(&mut rng, 1500, 0.9);
            let offset = rng.random_range(0..1500);
            let m = mix_at_snr_with_offset(&s, &n, 5.0, offset).unwrap();
            assert!((measured_snr(&s, &n, m.gain, offset) - 5.0).abs() < 0.1);
            assert_eq!(m.clipped, 0);
        }
    }

    #[test]
    fn silent_inputs_are_rejected() {
        let s = Waveform::new(vec![0.1; 100]);
        let z = Waveform::zeros(100);
        assert!(matches!(mix_at_snr(&z, &s, 5.0), Err(Error::SilentInput("signal"))));
        assert!(matches!(mix_at_snr(&s, &z, 5.0), Err(Error::SilentInput("noise"))));
    }

    #[test]
    fn tiling_wraps_from_offset() {
        let n = Waveform::new(vec![0.1, 0.2, 0.3]);
        assert_eq!(tile_noise(&n, 5, 2), vec![0.3, 0.1, 0.2, 0.3, 0.1]);
    }

    #[test]
    fn mixing_is_linear_in_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_wave(&mut rng, 8000, 0.2);
        let n = random_wave(&mut rng, 3000, 0.5);
        let a = 0.5f32;
        let (sa, _) = s.scaled(a);
        let residual_power = |mix: &Waveform, sig: &Waveform| {
            mix.samples()
                .iter()
                .zip(sig.samples())
                .map(|(&m, &x)| (m as f64 - x as f64).powi(2))
                .sum::<f64>()
                / sig.len() as f64
        };
        let base = residual_power(&mix_at_snr(&s, &n, 10.0).unwrap().waveform, &s);
        let scaled = residual_power(&mix_at_snr(&sa, &n, 10.0).unwrap().waveform, &sa);
        let expected = (a as f64).powi(2) * base;
        assert!((scaled - expected).abs() / expected < 1e-6);
    }

    fn bank(names: &[&str]) -> NoiseBank {
        NoiseBank::new(
            names
                .iter()
                .map(|n| NoiseClip {
                    name: n.to_string(),
                    waveform: Waveform::new(vec![0.1; 16_000]),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_entry_draws_are_fixed() {
        let b = bank(&["fan"]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let c = sample_condition(&mut rng, &b, &[SnrLevel::Db(10.0)]).unwrap();
            assert_eq!(c.noise_name, "fan");
            assert_eq!(c.snr, SnrLevel::Db(10.0));
        }
    }

    #[test]
    fn draws_are_reproducible() {
        let b = bank(&["a", "b", "c"]);
        let snrs: Vec<SnrLevel> = TRAINING_SNRS_DB.iter().map(|&d| SnrLevel::Db(d)).collect();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            (0..50)
                .map(|_| sample_condition(&mut rng, &b, &snrs).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn snr_frequencies_are_uniform() {
        let b = bank(&["a", "b", "c"]);
        let snrs: Vec<SnrLevel> = TRAINING_SNRS_DB.iter().map(|&d| SnrLevel::Db(d)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            let c = sample_condition(&mut rng, &b, &snrs).unwrap();
            let i = TRAINING_SNRS_DB.iter().position(|&d| Some(d) == c.snr.db()).unwrap();
            counts[i] += 1;
        }
        for c in counts {
            assert!((c as f64 / 10_000.0 - 0.25).abs() <= 0.02, "{counts:?}");
        }
    }

    #[test]
    fn empty_inputs_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let empty = NoiseBank { entries: vec![] };
        assert!(matches!(
            sample_condition(&mut rng, &empty, &[SnrLevel::Clean]),
            Err(Error::EmptyNoiseBank)
        ));
        assert!(matches!(
            sample_condition(&mut rng, &bank(&["a"]), &[]),
            Err(Error::EmptySnrSet)
        ));
    }

    #[test]
    fn short_clips_are_rejected() {
        let r = NoiseBank::new(vec![NoiseClip {
            name: "tiny".into(),
            waveform: Waveform::zeros(100),
        }]);
        assert!(matches!(r, Err(Error::ShortNoiseClip(_))));
    }

    #[test]
    fn clean_probability_is_respected() {
        let b = NoiseBank::synthetic(1, 1.0);
        let mc = MultiCondition::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let clean = (0..10_000)
            .filter(|_| mc.sample(&mut rng, &b).unwrap().snr == SnrLevel::Clean)
            .count();
        assert!((clean as f64 / 10_000.0 - 0.2).abs() < 0.02);
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("d{i:04}")).collect()
    }

    #[test]
    fn split_sizes() {
        let s = split_dataset(&ids(10), 1).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (8, 1, 1));
        let items = ids(100);
        let s = split_dataset(&items, 1).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (80, 10, 10));
        let mut all: Vec<_> = s.train.iter().chain(&s.valid).chain(&s.test).cloned().collect();
        all.sort();
        assert_eq!(all, items);
        assert!(matches!(split_dataset(&ids(9), 1), Err(Error::TooFewItems { .. })));
    }

    #[test]
    fn split_depends_only_on_seed() {
        let items = ids(100);
        assert_eq!(split_dataset(&items, 4).unwrap(), split_dataset(&items, 4).unwrap());
        let differing = (0..100u64)
            .filter(|&s| split_dataset(&items, s).unwrap() != split_dataset(&items, s + 1000).unwrap())
            .count();
        assert!(differing >= 99);
    }

    #[test]
    fn snr_level_serde() {
        assert_eq!(serde_json::to_string(&SnrLevel::Clean).unwrap(), "\"clean\"");
        assert_eq!(serde_json::to_string(&SnrLevel::Db(5.0)).unwrap(), "5.0");
        let v: Vec<SnrLevel> = serde_json::from_str("[\"clean\", 10]").unwrap();
        assert_eq!(v, vec![SnrLevel::Clean, SnrLevel::Db(10.0)]);
    }

    #[test]
    fn synthetic_bank_is_deterministic_and_long_enough() {
        let a = NoiseBank::synthetic(3, 2.0);
        assert_eq!(a, NoiseBank::synthetic(3, 2.0));
        assert_eq!(a.len(), 6);
        assert!(a.entries().iter().all(|e| e.waveform.len() == 32_000));
        assert!(a.entries().iter().all(|e| power_of(e.waveform.samples()).unwrap() > 0.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn split_is_a_disjoint_cover(n in 10usize..200, seed in any::<u64>()) {
                let items = ids(n);
                let s = split_dataset(&items, seed).unwrap();
                let mut all: Vec<_> = s.train.iter().chain(&s.valid).chain(&s.test).cloned().collect();
                prop_assert_eq!(all.len(), n);
                all.sort();
                all.dedup();
                prop_assert_eq!(all, items);
            }
        }
    }
}
