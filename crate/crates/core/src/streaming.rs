//! Real-time inference over a 5 s ring buffer, one prediction per 100 ms.

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::audio::SAMPLE_RATE;
use crate::codebook::{p_now_from_probs, ROBOT, USER};
use crate::error::{Error, Result};
use crate::features::{frame_features, HOP, NUM_BANDS, WINDOW};
use crate::model::{forward, FrameBatch, Parameters};

/// Samples of context held per channel (5 s).
pub const RING_CAPACITY: usize = 5 * SAMPLE_RATE as usize;
/// Seconds between ticks.
pub const TICK_S: f64 = HOP as f64 / SAMPLE_RATE as f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    /// 1-based tick count; the prediction covers audio up to `timestamp_s`.
    pub frame_index: u64,
    pub timestamp_s: f64,
    pub p_now_user: f64,
    pub p_now_robot: f64,
    pub vad: [f64; 2],
    pub vap_entropy: f64,
    pub compute_ms: f64,
}

/// Log-mel rows in one window.
const WINDOW_ROWS: usize = RING_CAPACITY / HOP;
/// Leading rows whose analysis window reaches before the ring start.
const PADDED_ROWS: usize = WINDOW / HOP - 1;

/// Fixed-capacity sample history, oldest first once unrolled, plus the
/// log-mel row of every hop it holds.
#[derive(Debug, Clone)]
struct Ring {
    data: Vec<f32>,
    head: usize,
    rows: VecDeque<[f64; NUM_BANDS]>,
}

impl Ring {
    fn new() -> Self {
        let silent = frame_features(&[0.0; WINDOW]);
        Self {
            data: vec![0.0; RING_CAPACITY],
            head: 0,
            rows: std::iter::repeat_n(silent, WINDOW_ROWS).collect(),
        }
    }

    /// Appends one hop and its feature row.
    fn push_hop(&mut self, hop: &[f32], scratch: &mut Vec<f32>) {
        self.extend(hop);
        self.unrolled(scratch);
        self.rows.pop_front();
        self.rows.push_back(frame_features(scratch));
    }

    /// Features of the unrolled window exactly as a fresh extraction over
    /// it would produce: cached rows, except the leading rows which see
    /// zero padding instead of the evicted audio.
    fn features(&self, unrolled: &[f32]) -> ndarray::Array2<f64> {
        let mut out = ndarray::Array2::zeros((WINDOW_ROWS, NUM_BANDS));
        for (t, mut dst) in out.rows_mut().into_iter().enumerate() {
            let row = if t < PADDED_ROWS {
                frame_features(&unrolled[..(t + 1) * HOP])
            } else {
                self.rows[t]
            };
            dst.assign(&ndarray::ArrayView1::from(&row[..]));
        }
        out
    }

    fn extend(&mut self, samples: &[f32]) {
        for &s in samples {
            self.data[self.head] = s;
            self.head = (self.head + 1) % RING_CAPACITY;
        }
    }

    fn unrolled(&self, out: &mut Vec<f32>) {
        out.clear();
        out.extend_from_slice(&self.data[self.head..]);
        out.extend_from_slice(&self.data[..self.head]);
    }
}

/// Streaming state for one dialogue. Pushed audio queues until a tick
/// consumes it one hop at a time, so results do not depend on how the
/// audio was chunked.
#[derive(Debug, Clone)]
pub struct StreamContext {
    ring_a: Ring,
    ring_b: Ring,
    pending_a: Vec<f32>,
    pending_b: Vec<f32>,
    clock: u64,
    params: Option<Arc<Parameters>>,
    scratch: Vec<f32>,
}

impl Default for StreamContext {
    fn default() -> Self {
        Self::new()
    }
}

impl StreamContext {
    pub fn new() -> Self {
        Self {
            ring_a: Ring::new(),
            ring_b: Ring::new(),
            pending_a: Vec::new(),
            pending_b: Vec::new(),
            clock: 0,
            params: None,
            scratch: Vec::with_capacity(RING_CAPACITY),
        }
    }

    pub fn with_model(params: Arc<Parameters>) -> Self {
        let mut ctx = Self::new();
        ctx.attach(params);
        ctx
    }

    pub fn attach(&mut self, params: Arc<Parameters>) {
        self.params = Some(params);
    }

    /// Ticks emitted since creation or the last reset.
    pub fn clock(&self) -> u64 {
        self.clock
    }

    /// Number of ticks the queued audio allows.
    pub fn due_ticks(&self) -> usize {
        self.pending_a.len() / HOP
    }

    /// Queues audio for both channels; `None` for the robot channel means
    /// silence of the same length.
    pub fn push_audio(&mut self, chunk_a: &[f32], chunk_b: Option<&[f32]>) -> Result<()> {
        match chunk_b {
            Some(b) if b.len() != chunk_a.len() => {
                return Err(Error::ChunkMismatch {
                    a: chunk_a.len(),
                    b: b.len(),
                })
            }
            Some(b) => self.pending_b.extend_from_slice(b),
            None => self.pending_b.resize(self.pending_b.len() + chunk_a.len(), 0.0),
        }
        self.pending_a.extend_from_slice(chunk_a);
        Ok(())
    }

    /// The most recent 5 s of consumed audio per channel, oldest first.
    pub fn window(&self) -> (Vec<f32>, Vec<f32>) {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        self.ring_a.unrolled(&mut a);
        self.ring_b.unrolled(&mut b);
        (a, b)
    }

    /// Consumes one hop of queued audio and predicts over the buffered
    /// window. Returns `None` when less than 100 ms is queued.
    pub fn tick(&mut self) -> Result<Option<FrameResult>> {
        let params = self.params.clone().ok_or(Error::ModelNotAttached)?;
        if self.pending_a.len() < HOP {
            return Ok(None);
        }
        let started = Instant::now();
        self.ring_a.push_hop(&self.pending_a[..HOP], &mut self.scratch);
        let fa = self.ring_a.features(&self.scratch);
        self.ring_b.push_hop(&self.pending_b[..HOP], &mut self.scratch);
        let fb = self.ring_b.features(&self.scratch);
        self.pending_a.drain(..HOP);
        self.pending_b.drain(..HOP);
        self.clock += 1;
        let mut result = predict_last(&params, FrameBatch::unlabeled(fa, fb), self.clock)?;
        result.compute_ms = started.elapsed().as_secs_f64() * 1e3;
        Ok(Some(result))
    }

    /// Ticks until the queue holds less than one hop.
    pub fn drain(&mut self) -> Result<Vec<FrameResult>> {
        let mut out = Vec::with_capacity(self.due_ticks());
        while let Some(r) = self.tick()? {
            out.push(r);
        }
        Ok(out)
    }

    /// Zeroes the buffers, drops queued audio and restarts the clock. The
    /// attached model is kept.
    pub fn reset(&mut self) {
        self.ring_a = Ring::new();
        self.ring_b = Ring::new();
        self.pending_a.clear();
        self.pending_b.clear();
        self.clock = 0;
    }
}

/// Prediction for the final frame of `batch`, stamped as tick `frame_index`.
pub(crate) fn predict_last(p: &Parameters, batch: FrameBatch, frame_index: u64) -> Result<FrameResult> {
    let n = p.config().context_frames;
    let batch = if batch.len() > n {
        let skip = batch.len() - n;
        FrameBatch::unlabeled(
            batch.features_a.slice(ndarray::s![skip.., ..]).to_owned(),
            batch.features_b.slice(ndarray::s![skip.., ..]).to_owned(),
        )
    } else {
        batch
    };
    let out = forward(p, &batch)?;
    let last = out.len() - 1;
    let probs = out.vap.row(last);
    let probs = probs.as_slice().expect("rows are contiguous");
    let p_now_user = p_now_from_probs(probs, USER);
    let p_now_robot = p_now_from_probs(probs, ROBOT);
    let vap_entropy = -probs.iter().filter(|&&q| q > 0.0).map(|&q| q * q.ln()).sum::<f64>();
    Ok(FrameResult {
        frame_index,
        timestamp_s: frame_index as f64 * TICK_S,
        p_now_user,
        p_now_robot,
        vad: out.vad[last],
        vap_entropy,
        compute_ms: 0.0,
    })
}

/// Streams two whole channels through a fresh context in 100 ms chunks.
/// `robot = None` streams silence on the robot channel.
pub fn stream_signal(params: Arc<Parameters>, user: &[f32], robot: Option<&[f32]>) -> Result<Vec<FrameResult>> {
    let mut ctx = StreamContext::with_model(params);
    ctx.push_audio(user, robot)?;
    ctx.drain()
}

/// Serializes results as JSON lines.
pub fn to_jsonl(results: &[FrameResult]) -> Result<String> {
    let mut out = String::new();
    for r in results {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Mean tick compute time over the tick period.
pub fn real_time_factor(results: &[FrameResult]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let mean_ms = results.iter().map(|r| r.compute_ms).sum::<f64>() / results.len() as f64;
    mean_ms / (TICK_S * 1e3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::extract_features;
    use crate::audio::Waveform;
    use crate::model::ModelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> Arc<Parameters> {
        let mut p = Parameters::init(&ModelConfig {
            seed: 5,
            ..ModelConfig::default()
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for name in ["vap_head.w", "vad_head.w"] {
            p.tensor_mut(name)
                .unwrap()
                .mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        Arc::new(p)
    }

    fn noise(len: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|i| {
            let env = if (i / 8000) % 2 == 0 { 0.3 } else { 0.01 };
            env * rng.random_range(-1.0f32..1.0)
        }).collect()
    }

    #[test]
    fn one_hop_makes_one_tick_due() {
        let mut ctx = StreamContext::with_model(model());
        ctx.push_audio(&[0.0; HOP - 1], None).unwrap();
        assert_eq!(ctx.due_ticks(), 0);
        assert!(ctx.tick().unwrap().is_none());
        ctx.push_audio(&[0.0; 1], None).unwrap();
        assert_eq!(ctx.due_ticks(), 1);
        let r = ctx.tick().unwrap().unwrap();
        assert_eq!(r.frame_index, 1);
        assert!((r.timestamp_s - 0.1).abs() < 1e-12);
        assert!(ctx.tick().unwrap().is_none());
    }

    #[test]
    fn ring_keeps_only_last_five_seconds() {
        let mut ctx = StreamContext::with_model(model());
        let a = noise(96_000, 1);
        ctx.push_audio(&a, None).unwrap();
        assert_eq!(ctx.drain().unwrap().len(), 60);
        let (wa, wb) = ctx.window();
        assert_eq!(wa.len(), RING_CAPACITY);
        assert_eq!(&wa[..], &a[16_000..]);
        assert!(wb.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn cached_rows_equal_fresh_extraction() {
        let mut ring = Ring::new();
        let a = noise(100_000, 12);
        let mut scratch = Vec::new();
        for hop in a.chunks_exact(HOP) {
            ring.push_hop(hop, &mut scratch);
            let fresh = crate::features::features_from_samples(&scratch);
            assert_eq!(ring.features(&scratch), fresh);
        }
    }

    #[test]
    fn errors() {
        let mut ctx = StreamContext::new();
        assert!(matches!(ctx.push_audio(&[0.0; 3], Some(&[0.0; 2])), Err(Error::ChunkMismatch { .. })));
        ctx.push_audio(&[0.0; HOP], None).unwrap();
        assert!(matches!(ctx.tick(), Err(Error::ModelNotAttached)));
    }

    #[test]
    fn random_chunks_give_rate_and_bit_identical_results() {
        let p = model();
        let a = noise(160_000, 2);
        let b = noise(160_000, 3);
        let whole = stream_signal(p.clone(), &a, Some(&b)).unwrap();
        assert_eq!(whole.len(), 100);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ctx = StreamContext::with_model(p);
        let mut chunked = Vec::new();
        let mut i = 0;
        while i < a.len() {
            let n = rng.random_range(1..5000).min(a.len() - i);
            ctx.push_audio(&a[i..i + n], Some(&b[i..i + n])).unwrap();
            if rng.random_bool(0.5) {
                chunked.extend(ctx.drain().unwrap());
            }
            i += n;
        }
        chunked.extend(ctx.drain().unwrap());
        assert_eq!(chunked.len(), 100);
        for (x, y) in whole.iter().zip(&chunked) {
            assert_eq!(x.p_now_user.to_bits(), y.p_now_user.to_bits());
            assert_eq!(x.p_now_robot.to_bits(), y.p_now_robot.to_bits());
            assert_eq!(x.frame_index, y.frame_index);
        }
    }

    #[test]
    fn matches_offline_window_recompute() {
        let p = model();
        let a = noise(112_000, 7);
        let results = stream_signal(p.clone(), &a, None).unwrap();
        for r in &results {
            let end = r.frame_index as usize * HOP;
            let mut window = vec![0.0f32; RING_CAPACITY];
            let take = end.min(RING_CAPACITY);
            window[RING_CAPACITY - take..].copy_from_slice(&a[end - take..end]);
            let fa = extract_features(&Waveform::new(window));
            let fb = extract_features(&Waveform::zeros(RING_CAPACITY));
            let out = forward(&p, &FrameBatch::unlabeled(fa, fb)).unwrap();
            let d = out.distribution(out.len() - 1);
            let pu = crate::codebook::p_now(&d, USER);
            assert!((pu - r.p_now_user).abs() <= 1e-5);
            assert!((r.p_now_user + r.p_now_robot - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn reset_behaves_like_fresh_context() {
        let p = model();
        let a = noise(40_000, 9);
        let fresh = stream_signal(p.clone(), &a, None).unwrap();
        let mut ctx = StreamContext::with_model(p);
        ctx.push_audio(&noise(30_000, 10), None).unwrap();
        ctx.drain().unwrap();
        ctx.push_audio(&[0.5; 100], None).unwrap();
        ctx.reset();
        ctx.reset();
        assert_eq!(ctx.clock(), 0);
        assert!(ctx.window().0.iter().all(|&x| x == 0.0));
        ctx.push_audio(&a, None).unwrap();
        let again = ctx.drain().unwrap();
        assert_eq!(fresh.len(), again.len());
        for (x, y) in fresh.iter().zip(&again) {
            assert_eq!(x.p_now_user.to_bits(), y.p_now_user.to_bits());
        }
    }

    #[test]
    fn jsonl_has_one_line_per_result() {
        let results = stream_signal(model(), &noise(8_000, 11), None).unwrap();
        let text = to_jsonl(&results).unwrap();
        assert_eq!(text.lines().count(), 5);
        let back: FrameResult = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(back.frame_index, 1);
        assert!(real_time_factor(&results) > 0.0);
    }
}
