//! Training loop with per-epoch multi-condition augmentation, and the
//! per-SNR evaluation table.

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{batch_loss, grad_norm, loss_and_grad, tape::Mat, FrameBatch, FrameTarget, LossBreakdown, ModelConfig, Parameters};
use crate::audio::{StereoDialogue, VadTrack, LABEL_HOP};
use crate::codebook::{encode_state, window_from_labels, BinConfig};
use crate::error::{Error, Result};
use crate::features::{extract_features, HOP};
use crate::noise::{apply_condition, item_seed, Condition, ConditionRecord, MultiCondition, NoiseBank, SnrLevel};

/// Label frames per prediction hop.
const LABELS_PER_HOP: usize = HOP / LABEL_HOP;

#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub id: String,
    pub dialogue: StereoDialogue,
}

#[derive(Debug, Clone)]
pub enum Augmentation {
    Clean,
    MultiCondition { bank: NoiseBank, policy: MultiCondition },
}

impl Augmentation {
    pub fn name(&self) -> &'static str {
        match self {
            Augmentation::Clean => "clean",
            Augmentation::MultiCondition { .. } => "mc",
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<Condition> {
        match self {
            Augmentation::Clean => Ok(Condition::clean()),
            Augmentation::MultiCondition { bank, policy } => policy.sample(rng, bank),
        }
    }

    fn bank(&self) -> Option<&NoiseBank> {
        match self {
            Augmentation::Clean => None,
            Augmentation::MultiCondition { bank, .. } => Some(bank),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Multiplicative decay applied to the learning rate after each epoch.
    pub lr_decay: f64,
    /// Context windows per gradient step.
    pub batch_windows: usize,
    pub clip_norm: f64,
    /// Probability that a training sample has its robot channel silenced.
    pub zero_robot_prob: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 0.1,
            lr_decay: 0.98,
            batch_windows: 4,
            clip_norm: 1.0,
            zero_robot_prob: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Epoch 0 is the untrained model.
    pub epoch: usize,
    pub train: LossBreakdown,
    pub valid: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn initial(&self) -> Option<&EpochRecord> {
        self.epochs.first()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_vap,train_vad,valid_loss,valid_vap,valid_vad\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.epoch, e.train.total, e.train.vap, e.train.vad, e.valid.total, e.valid.vap, e.valid.vad
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    /// Parameters of the epoch with the lowest validation loss.
    pub params: Parameters,
    pub best_epoch: usize,
    pub history: History,
    /// Every augmentation draw, one per training item per epoch.
    pub conditions: Vec<ConditionRecord>,
}

/// Training targets for `frames` prediction frames. Frame `t` looks at the
/// 2 s of labels following `(t + 1) * 100 ms`; its VAD target is the
/// majority activity of the 100 ms hop it closes. Frames whose horizon runs
/// past the labels get no target.
pub fn frame_targets(vad_a: &VadTrack, vad_b: &VadTrack, frames: usize, bins: &BinConfig) -> Vec<Option<FrameTarget>> {
    let horizon = bins.horizon_frames();
    let len = vad_a.len().min(vad_b.len());
    (0..frames)
        .map(|t| {
            let start = (t + 1) * LABELS_PER_HOP;
            if start + horizon > len {
                return None;
            }
            let window = window_from_labels(&vad_a.frames()[start..], &vad_b.frames()[start..], bins).ok()?;
            let hop = start - LABELS_PER_HOP..start;
            let majority = |v: &VadTrack| v.frames()[hop.clone()].iter().filter(|&&f| f).count() * 2 >= LABELS_PER_HOP;
            Some(FrameTarget {
                state: encode_state(&window),
                vad: [majority(vad_a), majority(vad_b)],
            })
        })
        .collect()
}

/// Cuts a sequence into consecutive context windows, keeping only windows
/// that carry at least one target.
pub fn build_batches(
    features_a: &Array2<f64>,
    features_b: &Array2<f64>,
    targets: &[Option<FrameTarget>],
    context: usize,
) -> Vec<FrameBatch> {
    let n = features_a.nrows().min(features_b.nrows()).min(targets.len());
    (0..n)
        .step_by(context.max(1))
        .map(|start| {
            let end = (start + context).min(n);
            FrameBatch {
                features_a: features_a.slice(s![start..end, ..]).to_owned(),
                features_b: features_b.slice(s![start..end, ..]).to_owned(),
                targets: targets[start..end].to_vec(),
            }
        })
        .filter(|b| b.target_count() > 0)
        .collect()
}

struct PreparedItem<'a> {
    item: &'a DatasetItem,
    clean_a: Array2<f64>,
    robot: Array2<f64>,
    silent_robot: Array2<f64>,
    targets: Vec<Option<FrameTarget>>,
}

impl<'a> PreparedItem<'a> {
    fn new(item: &'a DatasetItem, bins: &BinConfig) -> Self {
        let clean_a = extract_features(&item.dialogue.channel_a);
        let robot = extract_features(&item.dialogue.channel_b);
        let silent_robot = extract_features(&crate::audio::Waveform::zeros(item.dialogue.len()));
        let targets = frame_targets(&item.dialogue.vad_a, &item.dialogue.vad_b, clean_a.nrows(), bins);
        Self {
            item,
            clean_a,
            robot,
            silent_robot,
            targets,
        }
    }

    /// Features of one augmented draw; also returns the applied condition.
    fn draw(
        &self,
        aug: &Augmentation,
        zero_robot_prob: f64,
        seed: u64,
        context: usize,
    ) -> Result<(Vec<FrameBatch>, ConditionRecord)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let condition = aug.draw(&mut rng)?;
        let user = match (condition.snr, aug.bank()) {
            (SnrLevel::Db(_), Some(bank)) => {
                let mixed = apply_condition(&self.item.dialogue.channel_a, bank, &condition, &mut rng)?;
                extract_features(&mixed.waveform)
            }
            _ => self.clean_a.clone(),
        };
        let robot = if rng.random::<f64>() < zero_robot_prob {
            &self.silent_robot
        } else {
            &self.robot
        };
        let record = ConditionRecord {
            item_id: self.item.id.clone(),
            noise_name: condition.noise_name.clone(),
            snr_db: condition.snr.db(),
            seed,
        };
        Ok((build_batches(&user, robot, &self.targets, context), record))
    }
}

fn mean_loss(batches: &[FrameBatch], p: &Parameters) -> Result<LossBreakdown> {
    let mut acc = LossBreakdown::default();
    for b in batches {
        let l = batch_loss(p, b)?;
        accumulate(&mut acc, &l);
    }
    finish(acc)
}

fn accumulate(acc: &mut LossBreakdown, l: &LossBreakdown) {
    let n = l.frames as f64;
    acc.total += l.total * n;
    acc.vap += l.vap * n;
    acc.vad += l.vad * n;
    acc.frames += l.frames;
}

fn finish(acc: LossBreakdown) -> Result<LossBreakdown> {
    if acc.frames == 0 {
        return Err(Error::NoTargets);
    }
    let n = acc.frames as f64;
    Ok(LossBreakdown {
        total: acc.total / n,
        vap: acc.vap / n,
        vad: acc.vad / n,
        frames: acc.frames,
    })
}

/// Gradient-descent training. Every epoch redraws the augmentation of each
/// training item from a seed derived from `(train_cfg.seed, item id,
/// epoch)`, so a fixed seed reproduces the run bit for bit. Validation uses
/// one fixed draw per item.
pub fn fit(
    train: &[DatasetItem],
    valid: &[DatasetItem],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    aug: &Augmentation,
) -> Result<TrainedModel> {
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    if !(train_cfg.learning_rate > 0.0) || train_cfg.batch_windows == 0 {
        return Err(Error::Config("learning rate and batch size must be positive".into()));
    }
    let context = model_cfg.context_frames;
    let mut params = Parameters::init(model_cfg)?;
    let prepared: Vec<_> = train.iter().map(|i| PreparedItem::new(i, &model_cfg.bins)).collect();
    let mut valid_batches = Vec::new();
    for item in valid {
        let prep = PreparedItem::new(item, &model_cfg.bins);
        let seed = item_seed(train_cfg.seed, &item.id, u64::MAX);
        valid_batches.extend(prep.draw(aug, train_cfg.zero_robot_prob, seed, context)?.0);
    }

    let mut conditions = Vec::new();
    let epoch_batches = |epoch: usize, conditions: &mut Vec<ConditionRecord>| -> Result<Vec<FrameBatch>> {
        let mut all = Vec::new();
        for prep in &prepared {
            let seed = item_seed(train_cfg.seed, &prep.item.id, epoch as u64);
            let (batches, record) = prep.draw(aug, train_cfg.zero_robot_prob, seed, context)?;
            conditions.push(record);
            all.extend(batches);
        }
        Ok(all)
    };

    // epoch 0: the untrained model on the first augmentation draw
    let first = epoch_batches(0, &mut Vec::new())?;
    let initial = EpochRecord {
        epoch: 0,
        train: mean_loss(&first, &params)?,
        valid: mean_loss(&valid_batches, &params)?,
    };
    drop(first);
    let mut history = History {
        epochs: vec![initial],
    };
    let mut best = (initial.valid.total, 0usize, params.clone());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(train_cfg.seed ^ 0x5eed);
    let mut lr = train_cfg.learning_rate;

    for epoch in 1..=train_cfg.epochs {
        let mut batches = epoch_batches(epoch, &mut conditions)?;
        batches.shuffle(&mut shuffle_rng);
        let mut running = LossBreakdown::default();
        for step in batches.chunks(train_cfg.batch_windows) {
            let mut sum: Option<Vec<Mat>> = None;
            for b in step {
                let (l, g) = loss_and_grad(&params, b)?;
                if !l.total.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        detail: format!("non-finite loss {}", l.total),
                    });
                }
                accumulate(&mut running, &l);
                match &mut sum {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, x)| *a += x),
                    None => sum = Some(g),
                }
            }
            let Some(mut grads) = sum else { continue };
            let scale = 1.0 / step.len() as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            let norm = grad_norm(&grads);
            if !norm.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: "non-finite gradient".into(),
                });
            }
            let clip = if norm > train_cfg.clip_norm { train_cfg.clip_norm / norm } else { 1.0 };
            for (t, g) in params.tensors_mut().iter_mut().zip(&grads) {
                t.scaled_add(-lr * clip, g);
            }
        }
        lr *= train_cfg.lr_decay;
        let valid_loss = mean_loss(&valid_batches, &params)?;
        if !valid_loss.total.is_finite() || !params.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: format!("validation loss {}", valid_loss.total),
            });
        }
        let record = EpochRecord {
            epoch,
            train: finish(running)?,
            valid: valid_loss,
        };
        log_epoch(&record);
        history.epochs.push(record);
        if valid_loss.total < best.0 {
            best = (valid_loss.total, epoch, params.clone());
        }
    }
    Ok(TrainedModel {
        params: best.2,
        best_epoch: best.1,
        history,
        conditions,
    })
}

fn log_epoch(r: &EpochRecord) {
    if std::env::var_os("VAP_LOG").is_some() {
        eprintln!(
            "epoch {:>3}  train L {:.4} (vap {:.4})  valid L {:.4} (vap {:.4})",
            r.epoch, r.train.total, r.train.vap, r.valid.total, r.valid.vap
        );
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub level: SnrLevel,
    pub vap_loss: f64,
    pub frames: usize,
}

/// Mean VAP loss per noise level, clean first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrEvalTable {
    pub rows: Vec<EvalRow>,
}

impl SnrEvalTable {
    pub fn get(&self, level: SnrLevel) -> Option<f64> {
        self.rows.iter().find(|r| r.level == level).map(|r| r.vap_loss)
    }

    /// `L_vap(level) - L_vap(clean)`.
    pub fn degradation(&self, level: SnrLevel) -> Option<f64> {
        Some(self.get(level)? - self.get(SnrLevel::Clean)?)
    }
}

/// Per-level VAP loss on the test items. Noise goes onto the user channel
/// only; each item keeps the same noise clip and offset at every level so
/// rows differ only in SNR.
pub fn eval_per_snr(
    p: &Parameters,
    test: &[DatasetItem],
    levels: &[SnrLevel],
    bank: &NoiseBank,
    seed: u64,
) -> Result<SnrEvalTable> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    if bank.is_empty() {
        return Err(Error::EmptyNoiseBank);
    }
    let cfg = p.config();
    let prepared: Vec<_> = test.iter().map(|i| PreparedItem::new(i, &cfg.bins)).collect();
    let mut rows = Vec::with_capacity(levels.len());
    for &level in levels {
        let mut acc = LossBreakdown::default();
        for prep in &prepared {
            let user = match level {
                SnrLevel::Clean => prep.clean_a.clone(),
                SnrLevel::Db(_) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(item_seed(seed, &prep.item.id, 0xe7a1));
                    let noise = &bank.entries()[rng.random_range(0..bank.len())];
                    let condition = Condition {
                        noise_name: noise.name.clone(),
                        snr: level,
                    };
                    let mixed = apply_condition(&prep.item.dialogue.channel_a, bank, &condition, &mut rng)?;
                    extract_features(&mixed.waveform)
                }
            };
            for b in build_batches(&user, &prep.robot, &prep.targets, cfg.context_frames) {
                accumulate(&mut acc, &batch_loss(p, &b)?);
            }
        }
        let l = finish(acc)?;
        rows.push(EvalRow {
            level,
            vap_loss: l.vap,
            frames: l.frames,
        });
    }
    Ok(SnrEvalTable { rows })
}
