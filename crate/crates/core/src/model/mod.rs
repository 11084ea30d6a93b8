//! The voice activity projection predictor.
//!
//! ```text
//! features_a ─ proj ─ channel transformer A ─┐                 ┌─ norm_a ─ VAD_a
//!                                            ├─ cross layers ──┤
//! features_b ─ proj ─ channel transformer B ─┘                 └─ norm_b ─ VAD_b
//!                                          VAP head ← (norm_a + norm_b)
//! ```
//!
//! The input projection is shared by both channels (it stands in for a
//! frozen speech encoder feeding a learned adapter). Every attention layer is
//! causal with an ALiBi recency bias, so no positional embedding is needed
//! and the output at frame `t` depends on frames `<= t` only.

mod checkpoint;
mod gradcheck;
pub mod tape;
mod train;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::codebook::{BinConfig, StateIndex, VapDistribution, NUM_STATES};
use crate::error::{Error, Result};
use crate::features::{normalize, NUM_BANDS};
use tape::{Mat, Tape, Var};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, grad_check_with, relative_error, GradCheckReport};
pub use train::{
    build_batches, eval_per_snr, fit, frame_targets, Augmentation, DatasetItem, EpochRecord, EvalRow,
    History, SnrEvalTable, TrainConfig, TrainedModel,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub feature_bands: usize,
    pub model_dim: usize,
    pub channel_layers: usize,
    pub cross_layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    /// 50 frames = 5 s at 10 Hz.
    pub context_frames: usize,
    pub seed: u64,
    pub bins: BinConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_bands: NUM_BANDS,
            model_dim: 32,
            channel_layers: 1,
            cross_layers: 1,
            heads: 2,
            ff_dim: 64,
            context_frames: 50,
            seed: 0,
            bins: BinConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_bands != NUM_BANDS {
            return Err(Error::Config(format!("feature_bands must be {NUM_BANDS}")));
        }
        if self.heads == 0 || self.model_dim == 0 || self.model_dim % self.heads != 0 {
            return Err(Error::Config("model_dim must be a positive multiple of heads".into()));
        }
        if self.context_frames != 50 {
            return Err(Error::Config("context_frames must be 50 (5 s at 10 Hz)".into()));
        }
        if self.ff_dim == 0 {
            return Err(Error::Config("ff_dim must be positive".into()));
        }
        self.bins.validate()
    }
}

#[derive(Debug, Clone, Copy)]
struct LinearP {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct NormP {
    gain: usize,
    bias: usize,
}

#[derive(Debug, Clone, Copy)]
struct AttnP {
    q: LinearP,
    /// Key projection weight; a key bias would cancel in the softmax.
    k: usize,
    v: LinearP,
    o: LinearP,
}

#[derive(Debug, Clone, Copy)]
struct FfnP {
    up: LinearP,
    down: LinearP,
}

#[derive(Debug, Clone, Copy)]
struct SelfBlockP {
    norm_attn: NormP,
    attn: AttnP,
    norm_ffn: NormP,
    ffn: FfnP,
}

#[derive(Debug, Clone, Copy)]
struct CrossBlockP {
    norm_self: NormP,
    self_attn: AttnP,
    norm_query: NormP,
    norm_memory: NormP,
    cross_attn: AttnP,
    norm_ffn: NormP,
    ffn: FfnP,
}

#[derive(Debug, Clone)]
struct Layout {
    input: LinearP,
    channels: [Vec<SelfBlockP>; 2],
    cross: Vec<[CrossBlockP; 2]>,
    out_norm: [NormP; 2],
    vap_head: LinearP,
    vad_head: LinearP,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Normal(f64),
    Ones,
    Zeros,
}

struct TensorSpec {
    name: String,
    shape: (usize, usize),
    init: Init,
}

#[derive(Default)]
struct LayoutBuilder {
    specs: Vec<TensorSpec>,
}

impl LayoutBuilder {
    fn tensor(&mut self, name: String, shape: (usize, usize), init: Init) -> usize {
        self.specs.push(TensorSpec { name, shape, init });
        self.specs.len() - 1
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, std: f64) -> LinearP {
        LinearP {
            w: self.tensor(format!("{name}.w"), (fan_in, fan_out), Init::Normal(std)),
            b: self.tensor(format!("{name}.b"), (1, fan_out), Init::Zeros),
        }
    }

    fn norm(&mut self, name: &str, dim: usize) -> NormP {
        NormP {
            gain: self.tensor(format!("{name}.gain"), (1, dim), Init::Ones),
            bias: self.tensor(format!("{name}.bias"), (1, dim), Init::Zeros),
        }
    }

    fn attn(&mut self, name: &str, dim: usize) -> AttnP {
        let std = 1.0 / (dim as f64).sqrt();
        AttnP {
            q: self.linear(&format!("{name}.q"), dim, dim, std),
            k: self.tensor(format!("{name}.k.w"), (dim, dim), Init::Normal(std)),
            v: self.linear(&format!("{name}.v"), dim, dim, std),
            o: self.linear(&format!("{name}.o"), dim, dim, 0.5 * std),
        }
    }

    fn ffn(&mut self, name: &str, dim: usize, hidden: usize) -> FfnP {
        FfnP {
            up: self.linear(&format!("{name}.up"), dim, hidden, 1.0 / (dim as f64).sqrt()),
            down: self.linear(&format!("{name}.down"), hidden, dim, 0.5 / (hidden as f64).sqrt()),
        }
    }

    fn build(cfg: &ModelConfig) -> (Layout, Vec<TensorSpec>) {
        let d = cfg.model_dim;
        let mut b = LayoutBuilder::default();
        let input = b.linear("input", cfg.feature_bands, d, 1.0 / (cfg.feature_bands as f64).sqrt());
        let channel = |b: &mut LayoutBuilder, ch: &str| {
            (0..cfg.channel_layers)
                .map(|l| {
                    let p = format!("channel_{ch}.{l}");
                    SelfBlockP {
                        norm_attn: b.norm(&format!("{p}.norm_attn"), d),
                        attn: b.attn(&format!("{p}.attn"), d),
                        norm_ffn: b.norm(&format!("{p}.norm_ffn"), d),
                        ffn: b.ffn(&format!("{p}.ffn"), d, cfg.ff_dim),
                    }
                })
                .collect::<Vec<_>>()
        };
        let channels = [channel(&mut b, "a"), channel(&mut b, "b")];
        let cross = (0..cfg.cross_layers)
            .map(|l| {
                let dir = |b: &mut LayoutBuilder, ch: &str| {
                    let p = format!("cross.{l}.{ch}");
                    CrossBlockP {
                        norm_self: b.norm(&format!("{p}.norm_self"), d),
                        self_attn: b.attn(&format!("{p}.self_attn"), d),
                        norm_query: b.norm(&format!("{p}.norm_query"), d),
                        norm_memory: b.norm(&format!("{p}.norm_memory"), d),
                        cross_attn: b.attn(&format!("{p}.cross_attn"), d),
                        norm_ffn: b.norm(&format!("{p}.norm_ffn"), d),
                        ffn: b.ffn(&format!("{p}.ffn"), d, cfg.ff_dim),
                    }
                };
                [dir(&mut b, "a"), dir(&mut b, "b")]
            })
            .collect();
        let out_norm = [b.norm("out_norm.a", d), b.norm("out_norm.b", d)];
        let vap_head = b.linear("vap_head", d, NUM_STATES, 0.02);
        let vad_head = b.linear("vad_head", d, 2, 0.02);
        let layout = Layout {
            input,
            channels,
            cross,
            out_norm,
            vap_head,
            vad_head,
        };
        (layout, b.specs)
    }
}

/// All learnable tensors of the predictor, addressed by stable names.
#[derive(Debug, Clone)]
pub struct Parameters {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Mat>,
    layout: Layout,
}

impl PartialEq for Parameters {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.names == other.names && self.tensors == other.tensors
    }
}

impl Parameters {
    /// Fresh random initialization from `cfg.seed`. The VAP and VAD heads
    /// start small so the initial outputs are close to uniform.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let (layout, specs) = LayoutBuilder::build(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let tensors = specs
            .iter()
            .map(|s| match s.init {
                Init::Ones => Mat::ones(s.shape),
                Init::Zeros => Mat::zeros(s.shape),
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, std).expect("finite std");
                    Mat::from_shape_simple_fn(s.shape, || dist.sample(&mut rng))
                }
            })
            .collect();
        Ok(Self {
            config: cfg.clone(),
            names: specs.into_iter().map(|s| s.name).collect(),
            tensors,
            layout,
        })
    }

    /// Rebuilds parameters from named tensors, checking names and shapes
    /// against the layout implied by `cfg`.
    pub fn from_named(cfg: &ModelConfig, named: Vec<(String, Mat)>) -> Result<Self> {
        let mut p = Self::init(cfg)?;
        if named.len() != p.names.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                p.names.len(),
                named.len()
            )));
        }
        for (name, tensor) in named {
            let idx = p
                .index_of(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor '{name}'")))?;
            if tensor.dim() != p.tensors[idx].dim() {
                return Err(Error::Checkpoint(format!(
                    "tensor '{name}' has shape {:?}, expected {:?}",
                    tensor.dim(),
                    p.tensors[idx].dim()
                )));
            }
            if tensor.iter().any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!("tensor '{name}' has non-finite values")));
            }
            p.tensors[idx] = tensor;
        }
        Ok(p)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Mat] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Mat] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn tensor(&self, name: &str) -> Option<&Mat> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Copies every channel-B / direction-B tensor from its A counterpart
    /// and the second VAD column from the first, making the network
    /// symmetric under swapping the two inputs.
    pub fn tie_channels(&mut self) {
        for i in 0..self.names.len() {
            let name = &self.names[i];
            let twin = if let Some(rest) = name.strip_prefix("channel_b.") {
                Some(format!("channel_a.{rest}"))
            } else if let Some(rest) = name.strip_prefix("out_norm.b.") {
                Some(format!("out_norm.a.{rest}"))
            } else if name.starts_with("cross.") && name.contains(".b.") {
                Some(name.replacen(".b.", ".a.", 1))
            } else {
                None
            };
            if let Some(src) = twin.and_then(|t| self.index_of(&t)) {
                self.tensors[i] = self.tensors[src].clone();
            }
        }
        let vad = self.layout.vad_head;
        let w0 = self.tensors[vad.w].column(0).to_owned();
        self.tensors[vad.w].column_mut(1).assign(&w0);
        let b0 = self.tensors[vad.b][[0, 0]];
        self.tensors[vad.b][[0, 1]] = b0;
    }

    pub fn zero_heads(&mut self) {
        let (vap, vad) = (self.layout.vap_head, self.layout.vad_head);
        for id in [vap.w, vap.b, vad.w, vad.b] {
            self.tensors[id].fill(0.0);
        }
    }
}

/// Per-frame supervision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameTarget {
    pub state: StateIndex,
    pub vad: [bool; 2],
}

/// Aligned feature sequences of the two channels with optional targets
/// (frames without a full 2 s future carry none).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBatch {
    /// Raw log-mel rows of the user channel.
    pub features_a: Array2<f64>,
    /// Raw log-mel rows of the robot channel.
    pub features_b: Array2<f64>,
    pub targets: Vec<Option<FrameTarget>>,
}

impl FrameBatch {
    pub fn unlabeled(features_a: Array2<f64>, features_b: Array2<f64>) -> Self {
        let n = features_a.nrows();
        Self {
            features_a,
            features_b,
            targets: vec![None; n],
        }
    }

    pub fn len(&self) -> usize {
        self.features_a.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn target_count(&self) -> usize {
        self.targets.iter().flatten().count()
    }
}

/// Per-frame outputs: a 256-way VAP distribution and per-speaker VAD
/// probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionOutput {
    /// `frames x 256`, rows sum to one.
    pub vap: Array2<f64>,
    pub vad: Vec<[f64; 2]>,
}

impl PredictionOutput {
    pub fn len(&self) -> usize {
        self.vad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vad.is_empty()
    }

    pub fn distribution(&self, frame: usize) -> VapDistribution {
        VapDistribution::new(self.vap.row(frame).to_vec()).expect("softmax rows are normalized")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub vap: f64,
    pub vad: f64,
    /// Frames that carried targets.
    pub frames: usize,
}

struct Graph {
    vap_logits: Var,
    vad_logits: [Var; 2],
}

fn linear(t: &mut Tape, p: &Parameters, x: Var, l: LinearP) -> Var {
    let w = t.param(l.w, &p.tensors[l.w]);
    let b = t.param(l.b, &p.tensors[l.b]);
    t.linear(x, w, b)
}

fn norm(t: &mut Tape, p: &Parameters, x: Var, n: NormP) -> Var {
    let g = t.param(n.gain, &p.tensors[n.gain]);
    let b = t.param(n.bias, &p.tensors[n.bias]);
    t.layer_norm(x, g, b)
}

fn attend(t: &mut Tape, p: &Parameters, query: Var, memory: Var, a: AttnP) -> Var {
    let q = linear(t, p, query, a.q);
    let kw = t.param(a.k, &p.tensors[a.k]);
    let kb = t.input(Mat::zeros((1, p.config.model_dim)));
    let k = t.linear(memory, kw, kb);
    let v = linear(t, p, memory, a.v);
    let mixed = t.attention(q, k, v, p.config.heads);
    linear(t, p, mixed, a.o)
}

fn feed_forward(t: &mut Tape, p: &Parameters, x: Var, f: FfnP) -> Var {
    let h = linear(t, p, x, f.up);
    let h = t.gelu(h);
    linear(t, p, h, f.down)
}

fn self_block(t: &mut Tape, p: &Parameters, x: Var, blk: &SelfBlockP) -> Var {
    let n = norm(t, p, x, blk.norm_attn);
    let a = attend(t, p, n, n, blk.attn);
    let x = t.add(x, a);
    let n = norm(t, p, x, blk.norm_ffn);
    let f = feed_forward(t, p, n, blk.ffn);
    t.add(x, f)
}

fn cross_block(t: &mut Tape, p: &Parameters, xs: [Var; 2], blk: &[CrossBlockP; 2]) -> [Var; 2] {
    let mut after_self = [xs[0]; 2];
    for s in 0..2 {
        let n = norm(t, p, xs[s], blk[s].norm_self);
        let a = attend(t, p, n, n, blk[s].self_attn);
        after_self[s] = t.add(xs[s], a);
    }
    let mut out = after_self;
    for s in 0..2 {
        let other = after_self[1 - s];
        let q = norm(t, p, after_self[s], blk[s].norm_query);
        let m = norm(t, p, other, blk[s].norm_memory);
        let a = attend(t, p, q, m, blk[s].cross_attn);
        let x = t.add(after_self[s], a);
        let n = norm(t, p, x, blk[s].norm_ffn);
        let f = feed_forward(t, p, n, blk[s].ffn);
        out[s] = t.add(x, f);
    }
    out
}

fn build_graph(t: &mut Tape, p: &Parameters, features_a: &Array2<f64>, features_b: &Array2<f64>) -> Graph {
    let lay = &p.layout;
    let mut streams = [features_a, features_b].map(|f| {
        let x = t.input(normalize(f));
        linear(t, p, x, lay.input)
    });
    for (s, stream) in streams.iter_mut().enumerate() {
        for blk in &lay.channels[s] {
            *stream = self_block(t, p, *stream, blk);
        }
    }
    for blk in &lay.cross {
        streams = cross_block(t, p, streams, blk);
    }
    let outs = [0, 1].map(|s| norm(t, p, streams[s], lay.out_norm[s]));
    let fused = t.add(outs[0], outs[1]);
    let vap_logits = linear(t, p, fused, lay.vap_head);
    let vw = t.param(lay.vad_head.w, &p.tensors[lay.vad_head.w]);
    let vb = t.param(lay.vad_head.b, &p.tensors[lay.vad_head.b]);
    let vad_logits = [0, 1].map(|s| t.linear_column(outs[s], vw, vb, s));
    Graph { vap_logits, vad_logits }
}

fn check_batch(p: &Parameters, batch: &FrameBatch) -> Result<()> {
    let (ta, fa) = batch.features_a.dim();
    let (tb, fb) = batch.features_b.dim();
    if ta != tb || fa != fb {
        return Err(Error::Shape(format!("channel features differ: {ta}x{fa} vs {tb}x{fb}")));
    }
    if fa != p.config.feature_bands {
        return Err(Error::Shape(format!(
            "expected {} feature bands, got {fa}",
            p.config.feature_bands
        )));
    }
    if ta > p.config.context_frames {
        return Err(Error::Shape(format!(
            "{ta} frames exceed the {}-frame context",
            p.config.context_frames
        )));
    }
    if batch.targets.len() != ta {
        return Err(Error::Shape("targets not aligned with features".into()));
    }
    Ok(())
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn outputs(t: &Tape, g: &Graph) -> PredictionOutput {
    let vap = softmax_rows(t.value(g.vap_logits));
    let (za, zb) = (t.value(g.vad_logits[0]), t.value(g.vad_logits[1]));
    let vad = za
        .iter()
        .zip(zb.iter())
        .map(|(&a, &b)| [sigmoid(a), sigmoid(b)])
        .collect();
    PredictionOutput { vap, vad }
}

/// Runs the predictor over at most `context_frames` aligned frames.
pub fn forward(p: &Parameters, batch: &FrameBatch) -> Result<PredictionOutput> {
    check_batch(p, batch)?;
    let mut t = Tape::new();
    let g = build_graph(&mut t, p, &batch.features_a, &batch.features_b);
    Ok(outputs(&t, &g))
}

const PROB_EPS: f64 = 1e-12;

/// Joint objective `L = L_vap + L_vad`: mean frame-wise cross-entropy over
/// the 256 states plus binary cross-entropy averaged over frames and both
/// speakers. Probabilities are clamped at 1e-12 before the log.
pub fn loss(out: &PredictionOutput, batch: &FrameBatch) -> Result<LossBreakdown> {
    if out.len() != batch.targets.len() {
        return Err(Error::Shape("outputs not aligned with targets".into()));
    }
    let (mut vap, mut vad, mut frames) = (0.0, 0.0, 0usize);
    for (t, target) in batch.targets.iter().enumerate() {
        let Some(target) = target else { continue };
        frames += 1;
        vap -= out.vap[[t, target.state.value()]].max(PROB_EPS).ln();
        for s in 0..2 {
            let p = out.vad[t][s];
            let q = if target.vad[s] { p } else { 1.0 - p };
            vad -= q.max(PROB_EPS).ln() / 2.0;
        }
    }
    if frames == 0 {
        return Err(Error::NoTargets);
    }
    let n = frames as f64;
    Ok(LossBreakdown {
        total: (vap + vad) / n,
        vap: vap / n,
        vad: vad / n,
        frames,
    })
}

/// Loss computed from logits (numerically stable) together with the
/// gradient of every parameter, in parameter order.
pub fn loss_and_grad(p: &Parameters, batch: &FrameBatch) -> Result<(LossBreakdown, Vec<Mat>)> {
    let (l, g, _) = loss_and_grad_inner(p, batch, true)?;
    Ok((l, g))
}

/// Loss from logits without building gradients.
pub fn batch_loss(p: &Parameters, batch: &FrameBatch) -> Result<LossBreakdown> {
    Ok(loss_and_grad_inner(p, batch, false)?.0)
}

fn loss_and_grad_inner(
    p: &Parameters,
    batch: &FrameBatch,
    want_grad: bool,
) -> Result<(LossBreakdown, Vec<Mat>, PredictionOutput)> {
    check_batch(p, batch)?;
    let frames = batch.target_count();
    if frames == 0 {
        return Err(Error::NoTargets);
    }
    let n = frames as f64;
    let mut t = Tape::new();
    let g = build_graph(&mut t, p, &batch.features_a, &batch.features_b);
    let out = outputs(&t, &g);
    let logits = t.value(g.vap_logits);
    let mut d_vap = Mat::zeros(logits.dim());
    let mut d_vad = [Mat::zeros((batch.len(), 1)), Mat::zeros((batch.len(), 1))];
    let (mut l_vap, mut l_vad) = (0.0, 0.0);
    for (i, target) in batch.targets.iter().enumerate() {
        let Some(target) = target else { continue };
        let row = logits.row(i);
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let k = target.state.value();
        l_vap += lse - row[k];
        let mut drow = d_vap.row_mut(i);
        drow.assign(&out.vap.row(i));
        drow[k] -= 1.0;
        drow.mapv_inplace(|v| v / n);
        for s in 0..2 {
            let z = t.value(g.vad_logits[s])[[i, 0]];
            let y = if target.vad[s] { 1.0 } else { 0.0 };
            l_vad += (z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()) / 2.0;
            d_vad[s][[i, 0]] = (sigmoid(z) - y) / (2.0 * n);
        }
    }
    let breakdown = LossBreakdown {
        total: (l_vap + l_vad) / n,
        vap: l_vap / n,
        vad: l_vad / n,
        frames,
    };
    let grads = if want_grad {
        let [da, db] = d_vad;
        let raw = t.backward(&[(g.vap_logits, d_vap), (g.vad_logits[0], da), (g.vad_logits[1], db)]);
        p.tensors
            .iter()
            .enumerate()
            .map(|(i, tensor)| {
                raw.get(i)
                    .cloned()
                    .flatten()
                    .unwrap_or_else(|| Mat::zeros(tensor.dim()))
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok((breakdown, grads, out))
}

/// Global L2 norm over a gradient set.
pub fn grad_norm(grads: &[Mat]) -> f64 {
    grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
}
