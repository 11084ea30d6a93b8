use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{batch_loss, loss_and_grad, tape::Mat, FrameBatch, Parameters};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct CheckedCoordinate {
    pub tensor: String,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates: Vec<CheckedCoordinate>,
}

/// `|a - n| / max(|a|, |n|)`; a zero analytic gradient with a numeric one
/// below 1e-8 counts as exact agreement.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    if analytic == 0.0 && numeric.abs() < 1e-8 {
        return 0.0;
    }
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Compares backpropagated gradients with central differences on `samples`
/// randomly chosen coordinates (at least one per tensor when possible).
pub fn grad_check(p: &Parameters, batch: &FrameBatch, samples: usize, seed: u64) -> Result<GradCheckReport> {
    let (_, grads) = loss_and_grad(p, batch)?;
    grad_check_with(p, batch, &grads, samples, seed)
}

/// Same as [`grad_check`] but against caller-supplied analytic gradients.
pub fn grad_check_with(
    p: &Parameters,
    batch: &FrameBatch,
    analytic: &[Mat],
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_tensors = p.tensors().len();
    let mut coordinates = Vec::with_capacity(samples);
    let mut probe = p.clone();
    for k in 0..samples {
        let ti = if k < n_tensors && samples >= n_tensors {
            k
        } else {
            rng.random_range(0..n_tensors)
        };
        let (rows, cols) = p.tensors()[ti].dim();
        let (r, c) = (rng.random_range(0..rows), rng.random_range(0..cols));
        let orig = p.tensors()[ti][[r, c]];
        probe.tensors_mut()[ti][[r, c]] = orig + FD_STEP;
        let plus = batch_loss(&probe, batch)?.total;
        probe.tensors_mut()[ti][[r, c]] = orig - FD_STEP;
        let minus = batch_loss(&probe, batch)?.total;
        probe.tensors_mut()[ti][[r, c]] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let a = analytic[ti][[r, c]];
        coordinates.push(CheckedCoordinate {
            tensor: p.names()[ti].clone(),
            row: r,
            col: c,
            analytic: a,
            numeric,
            rel_error: relative_error(a, numeric),
        });
    }
    let max_rel_error = coordinates.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        coordinates,
    })
}
