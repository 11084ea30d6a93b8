//! Reproducible commands over a run directory. Each command writes its
//! resolved configuration next to its outputs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::audio::{load_wav, save_wav, StereoDialogue, VadTrack, Waveform};
use crate::error::{Error, Result};
use crate::model::{
    eval_per_snr, fit, load_checkpoint, save_checkpoint, Augmentation, DatasetItem, ModelConfig, Parameters,
    SnrEvalTable, TrainConfig,
};
use crate::noise::{apply_condition, item_seed, sample_condition, ConditionRecord, DatasetSplit, MultiCondition, NoiseBank, SnrLevel};
use crate::sim::{compare_sessions, generate_dialogue, score_session, session_stats, DialogueScript, Policy, ResponseTimeRecord, SessionConfig, SessionOutcome, SessionStats};
use crate::streaming::{real_time_factor, FrameResult, StreamContext, TICK_S};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentationMode {
    Clean,
    Mc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_dialogues: usize,
    pub script: DialogueScript,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_dialogues: 200,
            script: DialogueScript {
                n_turns: 2,
                ..Default::default()
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Directory of 16 kHz mono WAV noise clips; a synthetic bank when unset.
    pub dir: Option<PathBuf>,
    pub synthetic_seed: u64,
    pub synthetic_clip_s: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            dir: None,
            synthetic_seed: 0,
            synthetic_clip_s: 10.0,
        }
    }
}

impl NoiseConfig {
    pub fn bank(&self) -> Result<NoiseBank> {
        match &self.dir {
            Some(dir) => NoiseBank::from_dir(dir),
            None => Ok(NoiseBank::synthetic(self.synthetic_seed, self.synthetic_clip_s)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainStage {
    pub mode: AugmentationMode,
    pub multi_condition: MultiCondition,
    pub config: TrainConfig,
}

impl Default for TrainStage {
    fn default() -> Self {
        Self {
            mode: AugmentationMode::Mc,
            multi_condition: MultiCondition::default(),
            config: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalStage {
    /// Column name to checkpoint path; the run checkpoint when empty.
    pub checkpoints: BTreeMap<String, PathBuf>,
    pub levels: Vec<SnrLevel>,
    /// Adds a column for a model with uniform output.
    pub uniform_baseline: bool,
    pub seed: u64,
}

impl Default for EvalStage {
    fn default() -> Self {
        Self {
            checkpoints: BTreeMap::new(),
            levels: SnrLevel::evaluation_levels(),
            uniform_baseline: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateStage {
    pub n_dialogues: usize,
    pub script: DialogueScript,
    pub policies: Vec<Policy>,
    pub session: SessionConfig,
    /// Noise conditions drawn per dialogue for the user channel.
    pub noise_levels: Vec<SnrLevel>,
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
}

impl Default for SimulateStage {
    fn default() -> Self {
        Self {
            n_dialogues: 40,
            script: DialogueScript {
                n_turns: 6,
                ..Default::default()
            },
            policies: vec![Policy::SttOnly, Policy::Hybrid, Policy::VapOnly],
            session: SessionConfig::default(),
            noise_levels: SnrLevel::evaluation_levels(),
            checkpoint: None,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamStage {
    /// User-channel WAV.
    pub input: Option<PathBuf>,
    /// Robot-channel WAV; silence when unset.
    pub robot_input: Option<PathBuf>,
    /// Pace ticks at wall-clock speed instead of as fast as possible.
    pub realtime: bool,
    pub checkpoint: Option<PathBuf>,
    /// JSON-lines destination; `<run_dir>/stream.jsonl` when unset.
    pub output: Option<PathBuf>,
}

impl Default for StreamStage {
    fn default() -> Self {
        Self {
            input: None,
            robot_input: None,
            realtime: false,
            checkpoint: None,
            output: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchStage {
    pub seconds: f64,
    /// Pass threshold for the mean tick time.
    pub threshold_ms: f64,
    /// Fresh initialization when unset and no run checkpoint exists.
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
}

impl Default for BenchStage {
    fn default() -> Self {
        Self {
            seconds: 20.0,
            threshold_ms: 100.0,
            checkpoint: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
    pub noise: NoiseConfig,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainStage,
    pub eval: EvalStage,
    pub simulate: SimulateStage,
    pub stream: StreamStage,
    pub bench: BenchStage,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            run_dir: "runs/default".into(),
            noise: NoiseConfig::default(),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            train: TrainStage::default(),
            eval: EvalStage::default(),
            simulate: SimulateStage::default(),
            stream: StreamStage::default(),
            bench: BenchStage::default(),
        }
    }
}

impl RunConfig {
    /// Reads a JSON config file (or the defaults) and applies
    /// `path.to.field=value` overrides. Values parse as JSON, falling back
    /// to a plain string.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut doc = match file {
            Some(path) => {
                if !path.exists() {
                    return Err(Error::MissingFile(path.to_path_buf()));
                }
                let text = fs::read_to_string(path)?;
                serde_json::from_str::<Value>(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => serde_json::to_value(RunConfig::default())?,
        };
        // fill absent sections so overrides can address defaulted fields
        let base: RunConfig = serde_json::from_value(doc.clone()).map_err(|e| Error::Config(e.to_string()))?;
        let defaults = serde_json::to_value(base)?;
        merge_missing(&mut doc, &defaults);
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.dataset.script.validate()?;
        self.simulate.script.validate()?;
        self.simulate.session.validate()?;
        if self.simulate.policies.is_empty() {
            return Err(Error::Config("simulate.policies is empty".into()));
        }
        if self.simulate.noise_levels.is_empty() || self.eval.levels.is_empty() {
            return Err(Error::EmptySnrSet);
        }
        if !(self.bench.seconds > 0.0) {
            return Err(Error::Config("bench.seconds must be positive".into()));
        }
        Ok(())
    }

    pub fn run_checkpoint(&self) -> PathBuf {
        self.run_dir.join("checkpoint.json")
    }

    fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

fn merge_missing(doc: &mut Value, defaults: &Value) {
    if let (Value::Object(d), Value::Object(def)) = (doc, defaults) {
        for (k, v) in def {
            match d.get_mut(k) {
                Some(existing) => merge_missing(existing, v),
                None => {
                    d.insert(k.clone(), v.clone());
                }
            }
        }
    }
}

fn apply_override(doc: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{spec}' is not path=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override '{path}': '{key}' is not inside an object")))?;
        let last = i + 1 == keys.len();
        if !obj.contains_key(*key) {
            return Err(Error::Config(format!("override '{path}': unknown field '{key}'")));
        }
        if last {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj.get_mut(*key).expect("checked");
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n_dialogues: usize,
    pub seed: u64,
    pub items: Vec<String>,
    pub split: DatasetSplit,
}

#[derive(Serialize, Deserialize)]
struct VadFile {
    a: String,
    b: String,
}

fn dialogue_seed(global: u64, id: &str) -> u64 {
    item_seed(global, id, 0)
}

/// Writes `<id>_a.wav`, `<id>_b.wav` and `<id>.vad.json` per dialogue plus
/// `manifest.json` with the 8:1:1 split.
pub fn cmd_synth_data(cfg: &RunConfig) -> Result<DatasetManifest> {
    let dir = &cfg.data_dir;
    fs::create_dir_all(dir)?;
    let d = &cfg.dataset;
    let items: Vec<String> = (0..d.n_dialogues).map(|i| format!("dlg{i:04}")).collect();
    let split = crate::noise::split_dataset(&items, d.seed)?;
    for id in &items {
        let dialogue = generate_dialogue(&d.script.with_seed(dialogue_seed(d.seed, id)))?;
        save_wav(&dialogue.channel_a, dir.join(format!("{id}_a.wav")))?;
        save_wav(&dialogue.channel_b, dir.join(format!("{id}_b.wav")))?;
        let vad = VadFile {
            a: dialogue.vad_a.to_bit_string(),
            b: dialogue.vad_b.to_bit_string(),
        };
        fs::write(dir.join(format!("{id}.vad.json")), serde_json::to_string(&vad)?)?;
    }
    let manifest = DatasetManifest {
        n_dialogues: d.n_dialogues,
        seed: d.seed,
        items,
        split,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    cfg.write_to(dir)?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn load_item(dir: &Path, id: &str) -> Result<DatasetItem> {
    let a = load_wav(dir.join(format!("{id}_a.wav")))?;
    let b = load_wav(dir.join(format!("{id}_b.wav")))?;
    let vad_path = dir.join(format!("{id}.vad.json"));
    if !vad_path.exists() {
        return Err(Error::MissingFile(vad_path));
    }
    let vad: VadFile = serde_json::from_str(&fs::read_to_string(vad_path)?)?;
    let dialogue = StereoDialogue::new(a, b, VadTrack::from_bit_string(&vad.a)?, VadTrack::from_bit_string(&vad.b)?)?;
    Ok(DatasetItem {
        id: id.to_string(),
        dialogue,
    })
}

pub fn load_items(dir: &Path, ids: &[String]) -> Result<Vec<DatasetItem>> {
    ids.iter().map(|id| load_item(dir, id)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: AugmentationMode,
    pub best_epoch: usize,
    pub initial_valid_vap: f64,
    pub final_train_vap: f64,
    pub initial_train_vap: f64,
    pub final_valid_vap: f64,
    pub checkpoint: PathBuf,
}

/// Trains on the dataset split and writes `checkpoint.json`, `history.csv`
/// and `conditions.jsonl` into the run directory.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainReport> {
    let manifest = load_manifest(&cfg.data_dir)?;
    let train = load_items(&cfg.data_dir, &manifest.split.train)?;
    let valid = load_items(&cfg.data_dir, &manifest.split.valid)?;
    let aug = match cfg.train.mode {
        AugmentationMode::Clean => Augmentation::Clean,
        AugmentationMode::Mc => Augmentation::MultiCondition {
            bank: cfg.noise.bank()?,
            policy: cfg.train.multi_condition.clone(),
        },
    };
    let trained = fit(&train, &valid, &cfg.model, &cfg.train.config, &aug)?;
    cfg.write_to(&cfg.run_dir)?;
    let checkpoint = cfg.run_checkpoint();
    save_checkpoint(&trained.params, aug.name(), &checkpoint)?;
    fs::write(cfg.run_dir.join("history.csv"), trained.history.to_csv())?;
    write_jsonl(&cfg.run_dir.join("conditions.jsonl"), &trained.conditions)?;
    let first = trained.history.initial().expect("epoch 0 is always recorded");
    let last = trained.history.last().expect("epoch 0 is always recorded");
    let report = TrainReport {
        mode: cfg.train.mode,
        best_epoch: trained.best_epoch,
        initial_train_vap: first.train.vap,
        initial_valid_vap: first.valid.vap,
        final_train_vap: last.train.vap,
        final_valid_vap: last.valid.vap,
        checkpoint,
    };
    fs::write(cfg.run_dir.join("train.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub columns: Vec<String>,
    pub tables: Vec<SnrEvalTable>,
}

impl EvalReport {
    /// One row per level, one column per model.
    pub fn to_csv(&self) -> String {
        let mut out = format!("level,{}\n", self.columns.join(","));
        let Some(first) = self.tables.first() else { return out };
        for (i, row) in first.rows.iter().enumerate() {
            out.push_str(&row.level.to_string());
            for t in &self.tables {
                out.push_str(&format!(",{:.6}", t.rows[i].vap_loss));
            }
            out.push('\n');
        }
        out
    }

    pub fn column(&self, name: &str) -> Option<&SnrEvalTable> {
        self.columns.iter().position(|c| c == name).map(|i| &self.tables[i])
    }
}

/// Test-split VAP loss per noise level for every configured checkpoint.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    let manifest = load_manifest(&cfg.data_dir)?;
    let test = load_items(&cfg.data_dir, &manifest.split.test)?;
    let bank = cfg.noise.bank()?;
    let mut sources: Vec<(String, PathBuf)> = cfg.eval.checkpoints.clone().into_iter().collect();
    if sources.is_empty() {
        sources.push(("model".into(), cfg.run_checkpoint()));
    }
    let mut report = EvalReport {
        columns: Vec::new(),
        tables: Vec::new(),
    };
    for (name, path) in sources {
        let (params, _) = load_checkpoint(&path)?;
        report.tables.push(eval_per_snr(&params, &test, &cfg.eval.levels, &bank, cfg.eval.seed)?);
        report.columns.push(name);
    }
    if cfg.eval.uniform_baseline {
        let mut uniform = Parameters::init(&cfg.model)?;
        uniform.zero_heads();
        report.tables.push(eval_per_snr(&uniform, &test, &cfg.eval.levels, &bank, cfg.eval.seed)?);
        report.columns.push("uniform".into());
    }
    cfg.write_to(&cfg.run_dir)?;
    fs::write(cfg.run_dir.join("eval.csv"), report.to_csv())?;
    fs::write(cfg.run_dir.join("eval.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: Policy,
    pub b: Policy,
    pub u: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub stats: Vec<SessionStats>,
    pub comparisons: Vec<Comparison>,
}

impl SimulationReport {
    pub fn policy(&self, p: Policy) -> Option<&SessionStats> {
        self.stats.iter().find(|s| s.policy == p)
    }
}

/// Simulation dialogues with their user channel under a per-dialogue noise
/// condition.
pub fn simulation_dialogues(cfg: &RunConfig) -> Result<Vec<(String, StereoDialogue, ConditionRecord)>> {
    let sim = &cfg.simulate;
    let bank = cfg.noise.bank()?;
    (0..sim.n_dialogues)
        .map(|i| {
            let id = format!("sim{i:04}");
            let clean = generate_dialogue(&sim.script.with_seed(dialogue_seed(sim.seed, &id)))?;
            let seed = item_seed(sim.seed, &id, 1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let condition = sample_condition(&mut rng, &bank, &sim.noise_levels)?;
            let user = apply_condition(&clean.channel_a, &bank, &condition, &mut rng)?.waveform;
            let dialogue = StereoDialogue::new(user, clean.channel_b, clean.vad_a, clean.vad_b)?;
            let record = ConditionRecord {
                item_id: id.clone(),
                noise_name: condition.noise_name,
                snr_db: condition.snr.db(),
                seed,
            };
            Ok((id, dialogue, record))
        })
        .collect()
}

/// Per-policy outcomes over the simulation dialogues. Each dialogue is
/// streamed once and scored under every policy with shared delay seeds.
pub fn simulate_policies(
    cfg: &RunConfig,
    params: Option<Arc<Parameters>>,
) -> Result<(Vec<(Policy, SessionOutcome)>, Vec<ConditionRecord>)> {
    let sim = &cfg.simulate;
    let needs_model = sim.policies.iter().any(|p| p.uses_vap());
    if needs_model && params.is_none() {
        let p = sim.policies.iter().find(|p| p.uses_vap()).expect("checked");
        return Err(Error::MissingModel(p.name()));
    }
    let mut outcomes: Vec<(Policy, SessionOutcome)> = sim.policies.iter().map(|&p| (p, SessionOutcome::default())).collect();
    let mut conditions = Vec::new();
    for (id, dialogue, record) in simulation_dialogues(cfg)? {
        let frames = match (&params, needs_model) {
            (Some(p), true) => Some(crate::streaming::stream_signal(p.clone(), dialogue.channel_a.samples(), None)?),
            _ => None,
        };
        for (policy, acc) in outcomes.iter_mut() {
            acc.extend(score_session(&id, &dialogue, frames.as_deref(), *policy, &sim.session)?);
        }
        conditions.push(record);
    }
    Ok((outcomes, conditions))
}

/// Runs every configured policy and writes records, events, statistics and
/// histograms.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<SimulationReport> {
    let sim = &cfg.simulate;
    let params = if sim.policies.iter().any(|p| p.uses_vap()) {
        let path = sim.checkpoint.clone().unwrap_or_else(|| cfg.run_checkpoint());
        Some(Arc::new(load_checkpoint(&path)?.0))
    } else {
        None
    };
    let (outcomes, conditions) = simulate_policies(cfg, params)?;
    let mut stats = Vec::new();
    for (policy, out) in &outcomes {
        stats.push(session_stats(*policy, out));
    }
    let mut comparisons = Vec::new();
    for i in 0..outcomes.len() {
        for j in i + 1..outcomes.len() {
            if outcomes[i].1.records.is_empty() || outcomes[j].1.records.is_empty() {
                continue;
            }
            let t = compare_sessions(&outcomes[i].1, &outcomes[j].1)?;
            comparisons.push(Comparison {
                a: outcomes[i].0,
                b: outcomes[j].0,
                u: t.u,
                p_value: t.p_value,
            });
        }
    }
    let dir = &cfg.run_dir;
    cfg.write_to(dir)?;
    let records: Vec<&ResponseTimeRecord> = outcomes.iter().flat_map(|(_, o)| &o.records).collect();
    write_jsonl(&dir.join("records.jsonl"), &records)?;
    let mut csv = format!("{}\n", ResponseTimeRecord::CSV_HEADER);
    for r in &records {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    fs::write(dir.join("records.csv"), csv)?;
    let events: Vec<Value> = outcomes
        .iter()
        .flat_map(|(p, o)| {
            o.records.iter().zip(&o.events).map(move |(r, e)| {
                let mut v = serde_json::to_value(e).expect("serializable");
                v["policy"] = Value::String(p.name().into());
                v["dialogue"] = Value::String(r.dialogue.clone());
                v
            })
        })
        .collect();
    write_jsonl(&dir.join("events.jsonl"), &events)?;
    write_jsonl(&dir.join("conditions.jsonl"), &conditions)?;
    for s in &stats {
        fs::write(dir.join(format!("hist_robot_{}.csv", s.policy.name())), s.robot_histogram.to_csv())?;
        fs::write(dir.join(format!("hist_user_{}.csv", s.policy.name())), s.user_histogram.to_csv())?;
    }
    let report = SimulationReport { stats, comparisons };
    fs::write(dir.join("stats.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamReport {
    pub frames: usize,
    pub audio_s: f64,
    pub mean_compute_ms: f64,
    pub max_compute_ms: f64,
    pub real_time_factor: f64,
    pub output: PathBuf,
}

/// Replays a WAV through the streaming runtime in 100 ms chunks and writes
/// one JSON line per prediction.
pub fn cmd_stream(cfg: &RunConfig) -> Result<StreamReport> {
    let st = &cfg.stream;
    let input = st
        .input
        .clone()
        .ok_or_else(|| Error::Config("stream.input is not set".into()))?;
    let user = load_wav(&input)?;
    let robot = st.robot_input.as_ref().map(load_wav).transpose()?;
    if let Some(r) = &robot {
        if r.len() != user.len() {
            return Err(Error::ChunkMismatch {
                a: user.len(),
                b: r.len(),
            });
        }
    }
    let path = st.checkpoint.clone().unwrap_or_else(|| cfg.run_checkpoint());
    let params = Arc::new(load_checkpoint(&path)?.0);
    cfg.write_to(&cfg.run_dir)?;
    let output = st.output.clone().unwrap_or_else(|| cfg.run_dir.join("stream.jsonl"));
    let mut sink = std::io::BufWriter::new(fs::File::create(&output)?);
    let results = replay(params, &user, robot.as_ref(), st.realtime, |r| {
        serde_json::to_writer(&mut sink, r)?;
        sink.write_all(b"\n")?;
        Ok(())
    })?;
    sink.flush()?;
    let report = StreamReport {
        frames: results.len(),
        audio_s: user.duration_s(),
        mean_compute_ms: results.iter().map(|r| r.compute_ms).sum::<f64>() / results.len().max(1) as f64,
        max_compute_ms: results.iter().map(|r| r.compute_ms).fold(0.0, f64::max),
        real_time_factor: real_time_factor(&results),
        output,
    };
    fs::write(cfg.run_dir.join("stream_report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Feeds audio in tick-sized chunks, optionally paced to wall-clock time,
/// handing each result to `emit`.
pub fn replay(
    params: Arc<Parameters>,
    user: &Waveform,
    robot: Option<&Waveform>,
    realtime: bool,
    mut emit: impl FnMut(&FrameResult) -> Result<()>,
) -> Result<Vec<FrameResult>> {
    let mut ctx = StreamContext::with_model(params);
    let hop = crate::features::HOP;
    let started = Instant::now();
    let mut results = Vec::new();
    for (i, chunk) in user.samples().chunks(hop).enumerate() {
        let robot_chunk = robot.map(|r| &r.samples()[i * hop..i * hop + chunk.len()]);
        ctx.push_audio(chunk, robot_chunk)?;
        while let Some(r) = ctx.tick()? {
            emit(&r)?;
            results.push(r);
        }
        if realtime {
            let due = Duration::from_secs_f64((i + 1) as f64 * TICK_S);
            if let Some(wait) = due.checked_sub(started.elapsed()) {
                std::thread::sleep(wait);
            }
        }
    }
    Ok(results)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub ticks: usize,
    pub mean_compute_ms: f64,
    pub p95_compute_ms: f64,
    pub max_compute_ms: f64,
    pub real_time_factor: f64,
    pub threshold_ms: f64,
    pub pass: bool,
    pub trained_model: bool,
}

/// Times streaming ticks over a synthetic dialogue.
pub fn cmd_bench(cfg: &RunConfig) -> Result<BenchReport> {
    let b = &cfg.bench;
    let path = b.checkpoint.clone().or_else(|| {
        let p = cfg.run_checkpoint();
        p.exists().then_some(p)
    });
    let (params, trained_model) = match path {
        Some(p) => (load_checkpoint(&p)?.0, true),
        None => (Parameters::init(&cfg.model)?, false),
    };
    let report = bench_streaming(Arc::new(params), b.seconds, b.threshold_ms, b.seed, trained_model)?;
    cfg.write_to(&cfg.run_dir)?;
    fs::write(cfg.run_dir.join("bench.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

pub fn bench_streaming(params: Arc<Parameters>, seconds: f64, threshold_ms: f64, seed: u64, trained_model: bool) -> Result<BenchReport> {
    let script = DialogueScript {
        n_turns: 8,
        seed,
        ..Default::default()
    };
    let d = generate_dialogue(&script)?;
    let n = ((seconds * crate::audio::SAMPLE_RATE as f64) as usize).min(d.len());
    let user = Waveform::new(d.channel_a.samples()[..n].to_vec());
    let robot = Waveform::new(d.channel_b.samples()[..n].to_vec());
    let results = replay(params, &user, Some(&robot), false, |_| Ok(()))?;
    let mut times: Vec<f64> = results.iter().map(|r| r.compute_ms).collect();
    times.sort_by(f64::total_cmp);
    let mean = times.iter().sum::<f64>() / times.len().max(1) as f64;
    let p95 = times.get(((times.len() as f64 * 0.95) as usize).min(times.len().saturating_sub(1))).copied().unwrap_or(0.0);
    Ok(BenchReport {
        ticks: results.len(),
        mean_compute_ms: mean,
        p95_compute_ms: p95,
        max_compute_ms: times.last().copied().unwrap_or(0.0),
        real_time_factor: real_time_factor(&results),
        threshold_ms,
        pass: mean < threshold_ms,
        trained_model,
    })
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
