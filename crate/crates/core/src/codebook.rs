//! The discrete projection-state space.
//!
//! The two seconds following a prediction frame are cut into four bins per
//! speaker; each bin is active or not, giving `2^(2*4) = 256` joint states.
//! The canonical class order puts the user in the low nibble with bin 0 as
//! the least significant bit:
//!
//! ```text
//! index = sum over speaker s in {0, 1}, bin i in {0..3} of bit(s, i) << (4 * s + i)
//! ```

use serde::{Deserialize, Serialize};

use crate::audio::LABEL_FRAME_RATE;
use crate::error::{Error, Result};

pub const NUM_SPEAKERS: usize = 2;
pub const NUM_BINS: usize = 4;
pub const NUM_STATES: usize = 1 << (NUM_SPEAKERS * NUM_BINS);
pub const USER: usize = 0;
pub const ROBOT: usize = 1;
/// Bins accumulated into `p_now` (0-600 ms with the default boundaries).
pub const NOW_BINS: [usize; 2] = [0, 1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinConfig {
    /// Bin end times in seconds, strictly ascending, ending at the horizon.
    pub boundaries_s: [f64; NUM_BINS],
    /// Minimum active fraction for a bin to count as active (inclusive).
    pub activity_ratio: f64,
}

impl Default for BinConfig {
    fn default() -> Self {
        Self {
            boundaries_s: [0.2, 0.6, 1.2, 2.0],
            activity_ratio: 0.5,
        }
    }
}

impl BinConfig {
    pub fn validate(&self) -> Result<()> {
        let b = &self.boundaries_s;
        if b[0] <= 0.0 || b.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("bin boundaries must be positive and strictly ascending".into()));
        }
        if (b[NUM_BINS - 1] - 2.0).abs() > 1e-9 {
            return Err(Error::Config("last bin boundary must be 2.0 s".into()));
        }
        if !(self.activity_ratio > 0.0 && self.activity_ratio <= 1.0) {
            return Err(Error::Config("activity ratio must be in (0, 1]".into()));
        }
        Ok(())
    }

    /// Bin ranges in label frames, relative to the prediction frame.
    pub fn frame_ranges(&self) -> [(usize, usize); NUM_BINS] {
        let mut out = [(0, 0); NUM_BINS];
        let mut start = 0;
        for (slot, &end_s) in out.iter_mut().zip(&self.boundaries_s) {
            let end = (end_s * LABEL_FRAME_RATE as f64).round() as usize;
            *slot = (start, end);
            start = end;
        }
        out
    }

    pub fn horizon_frames(&self) -> usize {
        self.frame_ranges()[NUM_BINS - 1].1
    }
}

/// Future activity of both speakers, `bits[speaker][bin]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ProjectionWindow {
    pub bits: [[bool; NUM_BINS]; NUM_SPEAKERS],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateIndex(u8);

impl StateIndex {
    pub fn new(value: usize) -> Result<Self> {
        u8::try_from(value)
            .map(Self)
            .map_err(|_| Error::StateOutOfRange(value))
    }

    pub fn value(self) -> usize {
        self.0 as usize
    }

    /// The same pattern with the two speakers exchanged.
    pub fn swap_speakers(self) -> Self {
        Self(self.0.rotate_left(4))
    }
}

pub fn encode_state(w: &ProjectionWindow) -> StateIndex {
    let mut v = 0u8;
    for (s, row) in w.bits.iter().enumerate() {
        for (i, &bit) in row.iter().enumerate() {
            if bit {
                v |= 1 << (NUM_BINS * s + i);
            }
        }
    }
    StateIndex(v)
}

pub fn decode_state(idx: usize) -> Result<ProjectionWindow> {
    let v = StateIndex::new(idx)?.0;
    let mut w = ProjectionWindow::default();
    for (s, row) in w.bits.iter_mut().enumerate() {
        for (i, bit) in row.iter_mut().enumerate() {
            *bit = v >> (NUM_BINS * s + i) & 1 == 1;
        }
    }
    Ok(w)
}

/// Projection window for a prediction frame from the label frames that
/// follow it. Each slice must cover at least the 2 s horizon; frames whose
/// horizon runs past the recording are excluded from training upstream.
pub fn window_from_labels(user: &[bool], robot: &[bool], cfg: &BinConfig) -> Result<ProjectionWindow> {
    let needed = cfg.horizon_frames();
    let got = user.len().min(robot.len());
    if got < needed {
        return Err(Error::ShortWindow { needed, got });
    }
    let mut w = ProjectionWindow::default();
    for (s, track) in [user, robot].iter().enumerate() {
        for (i, (start, end)) in cfg.frame_ranges().into_iter().enumerate() {
            let active = track[start..end].iter().filter(|&&f| f).count();
            w.bits[s][i] = active as f64 >= cfg.activity_ratio * (end - start) as f64;
        }
    }
    Ok(w)
}

/// A normalized distribution over the 256 states.
#[derive(Debug, Clone, PartialEq)]
pub struct VapDistribution {
    probs: Vec<f64>,
}

impl VapDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() != NUM_STATES {
            return Err(Error::Shape(format!("expected {NUM_STATES} probabilities, got {}", probs.len())));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::Shape("probabilities must be finite and non-negative".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Shape(format!("probabilities sum to {sum}")));
        }
        Ok(Self { probs })
    }

    pub fn uniform() -> Self {
        Self {
            probs: vec![1.0 / NUM_STATES as f64; NUM_STATES],
        }
    }

    pub fn one_hot(idx: StateIndex) -> Self {
        let mut probs = vec![0.0; NUM_STATES];
        probs[idx.value()] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        self.probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
    }

    pub fn argmax(&self) -> StateIndex {
        let (i, _) = self
            .probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best });
        StateIndex(i as u8)
    }
}

/// Expected fraction of the near bins in which `speaker` is active under
/// `probs` (unnormalized `p_now` numerator). The robot sum visits states
/// in speaker-swapped order so that swapping speakers is bit-exact.
fn near_activity(probs: &[f64], speaker: usize) -> f64 {
    let weights = near_weights();
    (0..NUM_STATES)
        .map(|i| {
            let idx = if speaker == USER {
                i
            } else {
                (i as u8).rotate_left(4) as usize
            };
            probs[idx] * weights[i]
        })
        .sum()
}

fn near_weights() -> &'static [f64; NUM_STATES] {
    static WEIGHTS: std::sync::OnceLock<[f64; NUM_STATES]> = std::sync::OnceLock::new();
    WEIGHTS.get_or_init(|| {
        let mut w = [0.0; NUM_STATES];
        for (idx, slot) in w.iter_mut().enumerate() {
            let window = decode_state(idx).expect("index in range");
            let active = NOW_BINS.iter().filter(|&&b| window.bits[USER][b]).count();
            *slot = active as f64 / NOW_BINS.len() as f64;
        }
        w
    })
}

/// Probability that `speaker` holds the next 0-600 ms: the speaker's
/// expected near-bin activity normalized against both speakers'. When
/// neither speaker is expected to be active the score is 0.5.
pub fn p_now(d: &VapDistribution, speaker: usize) -> f64 {
    p_now_from_probs(d.probs(), speaker)
}

pub(crate) fn p_now_from_probs(probs: &[f64], speaker: usize) -> f64 {
    let a_user = near_activity(probs, USER);
    let a_robot = near_activity(probs, ROBOT);
    let total = a_user + a_robot;
    if total < 1e-9 {
        return 0.5;
    }
    if speaker == USER {
        a_user / total
    } else {
        a_robot / total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn encoding_anchors() {
        assert_eq!(encode_state(&ProjectionWindow::default()).value(), 0);
        let full = ProjectionWindow {
            bits: [[true; 4]; 2],
        };
        assert_eq!(encode_state(&full).value(), 255);
        let mut w = ProjectionWindow::default();
        w.bits[USER][0] = true;
        assert_eq!(encode_state(&w).value(), 1);
        let mut w = ProjectionWindow::default();
        w.bits[ROBOT][0] = true;
        assert_eq!(encode_state(&w).value(), 16);
    }

    #[test]
    fn decode_anchors_and_range() {
        assert_eq!(decode_state(0).unwrap(), ProjectionWindow::default());
        assert_eq!(decode_state(255).unwrap().bits, [[true; 4]; 2]);
        assert!(matches!(decode_state(256), Err(Error::StateOutOfRange(256))));
    }

    #[test]
    fn codebook_is_bijective() {
        for idx in 0..NUM_STATES {
            assert_eq!(encode_state(&decode_state(idx).unwrap()).value(), idx);
        }
    }

    fn track(active: std::ops::Range<usize>) -> Vec<bool> {
        (0..200).map(|i| active.contains(&i)).collect()
    }

    #[test]
    fn labels_to_window() {
        let cfg = BinConfig::default();
        let silent = track(0..0);
        let w = window_from_labels(&silent, &silent, &cfg).unwrap();
        assert_eq!(encode_state(&w).value(), 0);
        let w = window_from_labels(&track(0..200), &silent, &cfg).unwrap();
        assert_eq!(encode_state(&w).value(), 15);
        // 10 of 20 frames in bin 0 meets the 0.5 ratio; 9 does not
        let w = window_from_labels(&track(0..10), &silent, &cfg).unwrap();
        assert!(w.bits[USER][0]);
        let w = window_from_labels(&track(0..9), &silent, &cfg).unwrap();
        assert!(!w.bits[USER][0]);
        assert!(matches!(
            window_from_labels(&silent[..150], &silent, &cfg),
            Err(Error::ShortWindow { needed: 200, got: 150 })
        ));
    }

    #[test]
    fn default_bins_cover_the_horizon() {
        let cfg = BinConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.frame_ranges(), [(0, 20), (20, 60), (60, 120), (120, 200)]);
        let bad = BinConfig {
            boundaries_s: [0.2, 0.2, 1.2, 2.0],
            ..cfg.clone()
        };
        assert!(bad.validate().is_err());
        let bad = BinConfig {
            boundaries_s: [0.2, 0.6, 1.2, 1.8],
            ..cfg
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn p_now_anchors() {
        let u = VapDistribution::uniform();
        assert!((p_now(&u, USER) - 0.5).abs() < 1e-12);
        assert!((p_now(&u, ROBOT) - 0.5).abs() < 1e-12);
        let mut w = ProjectionWindow::default();
        w.bits[USER][0] = true;
        w.bits[USER][1] = true;
        let d = VapDistribution::one_hot(encode_state(&w));
        assert_eq!(p_now(&d, USER), 1.0);
        assert_eq!(p_now(&d, ROBOT), 0.0);
        let silent = VapDistribution::one_hot(StateIndex::new(0).unwrap());
        assert_eq!(p_now(&silent, USER), 0.5);
    }

    #[test]
    fn distribution_validation() {
        assert!(VapDistribution::new(vec![0.5; 2]).is_err());
        assert!(VapDistribution::new(vec![0.01; 256]).is_err());
        let mut p = vec![0.0; 256];
        p[3] = 1.0;
        assert_eq!(VapDistribution::new(p).unwrap().argmax().value(), 3);
        assert!((VapDistribution::uniform().entropy() - 256f64.ln()).abs() < 1e-12);
    }

    fn random_dist(rng: &mut ChaCha8Rng) -> VapDistribution {
        let raw: Vec<f64> = (0..NUM_STATES).map(|_| rng.random::<f64>().powi(3)).collect();
        let s: f64 = raw.iter().sum();
        VapDistribution::new(raw.iter().map(|x| x / s).collect()).unwrap()
    }

    #[test]
    fn speaker_swap_swaps_p_now() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let d = random_dist(&mut rng);
            let mut swapped = vec![0.0; NUM_STATES];
            for (idx, &p) in d.probs().iter().enumerate() {
                swapped[StateIndex::new(idx).unwrap().swap_speakers().value()] = p;
            }
            let s = VapDistribution::new(swapped).unwrap();
            assert_eq!(p_now(&d, USER).to_bits(), p_now(&s, ROBOT).to_bits());
            assert_eq!(p_now(&d, ROBOT).to_bits(), p_now(&s, USER).to_bits());
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn window_is_monotone_in_activity(
                user in proptest::collection::vec(any::<bool>(), 200),
                robot in proptest::collection::vec(any::<bool>(), 200),
                extra in proptest::collection::vec(0usize..200, 0..40),
            ) {
                let cfg = BinConfig::default();
                let before = window_from_labels(&user, &robot, &cfg).unwrap();
                let mut more = user.clone();
                for &i in &extra {
                    more[i] = true;
                }
                let after = window_from_labels(&more, &robot, &cfg).unwrap();
                for i in 0..NUM_BINS {
                    prop_assert!(!before.bits[USER][i] || after.bits[USER][i]);
                }
            }
        }
    }
}
