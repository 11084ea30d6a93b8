//! Fixed log-mel frontend. Produces one 40-band vector per 100 ms hop so
//! the feature rate equals the 10 Hz prediction rate.

use std::sync::{Arc, OnceLock};

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio::{Waveform, SAMPLE_RATE};

pub const NUM_BANDS: usize = 40;
/// 100 ms.
pub const HOP: usize = 1600;
/// 400 ms analysis window.
pub const WINDOW: usize = 6400;
pub const LOG_FLOOR: f64 = 1e-10;

/// Fixed affine map applied to log-mel values before the learned
/// projection: silence maps to about -1, loud speech to about +1.
pub const FEATURE_OFFSET: f64 = -9.0;
pub const FEATURE_SCALE: f64 = 14.0;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Center frequencies (Hz) of the bands, with the two outer edges:
/// `NUM_BANDS + 2` points evenly spaced on the mel scale from 0 to Nyquist.
pub fn band_edges_hz() -> Vec<f64> {
    let top = hz_to_mel(SAMPLE_RATE as f64 / 2.0);
    (0..NUM_BANDS + 2)
        .map(|i| mel_to_hz(top * i as f64 / (NUM_BANDS + 1) as f64))
        .collect()
}

struct Band {
    first_bin: usize,
    weights: Vec<f64>,
}

struct Frontend {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    bands: Vec<Band>,
}

impl Frontend {
    fn new() -> Self {
        let fft = FftPlanner::new().plan_fft_forward(WINDOW);
        let window = (0..WINDOW)
            .map(|n| 0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / WINDOW as f64).cos())
            .collect();
        let bin_hz = SAMPLE_RATE as f64 / WINDOW as f64;
        let edges = band_edges_hz();
        let bands = (0..NUM_BANDS)
            .map(|m| {
                let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                let first_bin = (lo / bin_hz).ceil() as usize;
                let last_bin = ((hi / bin_hz).floor() as usize).min(WINDOW / 2);
                let weights = (first_bin..=last_bin)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        let up = (f - lo) / (mid - lo);
                        let down = (hi - f) / (hi - mid);
                        up.min(down).max(0.0)
                    })
                    .collect();
                Band { first_bin, weights }
            })
            .collect();
        Self { fft, window, bands }
    }

    fn frame(&self, segment: &[f32], buf: &mut [Complex<f64>], scratch: &mut [Complex<f64>], out: &mut [f64]) {
        // segment is right-aligned in the window; missing history is zero
        let pad = WINDOW - segment.len();
        for (i, c) in buf.iter_mut().enumerate() {
            let x = if i < pad { 0.0 } else { segment[i - pad] as f64 };
            *c = Complex::new(x * self.window[i], 0.0);
        }
        self.fft.process_with_scratch(buf, scratch);
        for (o, band) in out.iter_mut().zip(&self.bands) {
            let e: f64 = band
                .weights
                .iter()
                .enumerate()
                .map(|(j, w)| w * buf[band.first_bin + j].norm())
                .sum();
            *o = e.max(LOG_FLOOR).ln();
        }
    }
}

fn frontend() -> &'static Frontend {
    static FRONTEND: OnceLock<Frontend> = OnceLock::new();
    FRONTEND.get_or_init(Frontend::new)
}

/// Log-mel features, one row per complete 100 ms hop. Row `t` summarizes the
/// 400 ms of audio ending at `(t + 1) * 100 ms`, zero-padded before the
/// start of the signal.
pub fn extract_features(w: &Waveform) -> Array2<f64> {
    features_from_samples(w.samples())
}

pub fn features_from_samples(samples: &[f32]) -> Array2<f64> {
    let frames = samples.len() / HOP;
    let fe = frontend();
    let mut out = Array2::zeros((frames, NUM_BANDS));
    let mut buf = vec![Complex::new(0.0, 0.0); WINDOW];
    let mut scratch = vec![Complex::new(0.0, 0.0); fe.fft.get_inplace_scratch_len()];
    let mut row = [0.0; NUM_BANDS];
    for t in 0..frames {
        let end = (t + 1) * HOP;
        let start = end.saturating_sub(WINDOW);
        fe.frame(&samples[start..end], &mut buf, &mut scratch, &mut row);
        out.row_mut(t).assign(&ndarray::ArrayView1::from(&row[..]));
    }
    out
}

/// Log-mel row for the audio ending at the end of `segment`; history
/// beyond `segment` (up to one window) counts as zeros.
pub(crate) fn frame_features(segment: &[f32]) -> [f64; NUM_BANDS] {
    let fe = frontend();
    let segment = &segment[segment.len().saturating_sub(WINDOW)..];
    let mut buf = vec![Complex::new(0.0, 0.0); WINDOW];
    let mut scratch = vec![Complex::new(0.0, 0.0); fe.fft.get_inplace_scratch_len()];
    let mut row = [0.0; NUM_BANDS];
    fe.frame(segment, &mut buf, &mut scratch, &mut row);
    row
}

/// Maps raw log-mel values into the model's input range.
pub fn normalize(features: &Array2<f64>) -> Array2<f64> {
    features.mapv(|x| (x - FEATURE_OFFSET) / FEATURE_SCALE)
}
