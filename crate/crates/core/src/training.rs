//! Corpus manifests, the training loop and its configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::dsp::{extract_frames_width, load_audio, load_spectrogram, mel_spectrogram, DspConfig, MelSpectrogram, FRAME_COLUMNS, N_MELS};
use crate::error::{Error, Result};
use crate::kv;
use crate::model::{ModelConfig, PredNetModel, ALL_LAYER_LOSS, DESK_CHANNELS, PREDICTION_ONLY_LOSS, STOCK_CHANNELS, TINY_CHANNELS};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidInput(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// WAV or MELS file, relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub split: Split,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for e in &entries {
            if !seen.insert(&e.path) {
                return Err(Error::InvalidInput(format!("duplicate manifest path {}", e.path.display())));
            }
        }
        Ok(Manifest { entries })
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["path", "split", "label"])?;
        for e in &self.entries {
            w.write_record([e.path.to_string_lossy().as_ref(), &e.split.to_string(), &e.label])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
        crate::atomic_write(path, &bytes)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
            _ => Error::Csv(e),
        })?;
        if r.headers()?.iter().collect::<Vec<_>>() != ["path", "split", "label"] {
            return Err(Error::InvalidInput(format!(
                "{}: manifest header must be `path,split,label`",
                path.display()
            )));
        }
        let mut entries = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            entries.push(ManifestEntry {
                path: PathBuf::from(&rec[0]),
                split: rec[1].parse()?,
                label: rec[2].to_string(),
            });
        }
        Manifest::new(entries)
    }
}

/// Source label from a file stem: the stem with trailing digits and separators removed.
pub fn label_from_stem(stem: &str) -> String {
    let l = stem.trim_end_matches(|c: char| c.is_ascii_digit() || c == '_' || c == '-');
    if l.is_empty() {
        "unlabelled".into()
    } else {
        l.to_string()
    }
}

fn is_clip_file(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("wav") || e.eq_ignore_ascii_case("mels"))
}

/// Seeded train/val split of every WAV or MELS file directly under `dir`.
/// Paths in the result are relative to `dir`.
pub fn build_manifest(dir: &Path, val_fraction: f64, seed: u64) -> Result<Manifest> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(format!("val_fraction must be in [0, 1), got {val_fraction}")));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_clip_file(p))
        .map(|p| PathBuf::from(p.file_name().unwrap()))
        .collect();
    if files.is_empty() {
        return Err(Error::EmptyCorpus(dir.to_path_buf()));
    }
    files.sort();
    let mut order: Vec<usize> = (0..files.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (files.len() as f64 * val_fraction).round() as usize;
    if n_val == 0 {
        log::warn!("no validation clips: every clip is used for training");
    }
    let mut split = vec![Split::Train; files.len()];
    for &i in &order[..n_val] {
        split[i] = Split::Val;
    }
    let entries = files
        .into_iter()
        .zip(split)
        .map(|(path, split)| {
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            ManifestEntry {
                path,
                split,
                label: label_from_stem(&stem),
            }
        })
        .collect();
    Manifest::new(entries)
}

/// Spectrogram for a WAV (computed) or MELS (cached) file.
pub fn load_clip_spectrogram(path: &Path, dsp: &DspConfig) -> Result<MelSpectrogram> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match ext.as_str() {
        "mels" => load_spectrogram(path),
        "wav" => mel_spectrogram(&load_audio(path, false)?, dsp, &id),
        _ => Err(Error::UnsupportedFormat(format!("{}: expected .wav or .mels", path.display()))),
    }
}

/// Spectrograms of one split, in manifest order.
pub fn load_split(manifest: &Manifest, base: &Path, split: Split, dsp: &DspConfig) -> Result<Vec<MelSpectrogram>> {
    manifest
        .entries
        .par_iter()
        .filter(|e| e.split == split)
        .map(|e| load_clip_spectrogram(&base.join(&e.path), dsp))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Columns between consecutive frames.
    pub frame_hop: usize,
    /// Columns per frame.
    pub frame_width: usize,
    pub sequence_length: usize,
    /// Sequences drawn per clip per epoch; 0 uses every non-overlapping one.
    pub sequences_per_clip: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub channels: Vec<usize>,
    pub layer_loss: Vec<f64>,
    /// Epochs without validation improvement before stopping; 0 never stops early.
    pub patience: usize,
    pub val_fraction: f64,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            frame_hop: 1,
            frame_width: FRAME_COLUMNS,
            sequence_length: 10,
            sequences_per_clip: 1,
            batch_size: 1,
            epochs: 10,
            learning_rate: 1e-3,
            seed: 0,
            channels: DESK_CHANNELS.to_vec(),
            layer_loss: PREDICTION_ONLY_LOSS.to_vec(),
            patience: 3,
            val_fraction: 0.1,
            workers: 1,
        }
    }
}

/// Every key accepted in a training config file, with a short description.
pub const TRAIN_KEYS: &[(&str, &str)] = &[
    ("frame_hop", "columns between consecutive training frames"),
    ("frame_width", "columns per frame (44 = 508 ms)"),
    ("sequence_length", "frames per training sequence (>= 2)"),
    ("sequences_per_clip", "sequences drawn per clip per epoch (0 = all)"),
    ("batch_size", "sequences per optimizer step"),
    ("epochs", "maximum number of epochs"),
    ("learning_rate", "Adam step size"),
    ("seed", "RNG seed for init, splits and shuffling"),
    ("channels", "stock | desk | tiny | comma list starting with 1"),
    ("layer_loss", "prediction | all | comma list, one weight per level"),
    ("patience", "epochs without val improvement before stopping (0 = off)"),
    ("val_fraction", "share of clips held out for validation"),
    ("workers", "threads for per-sequence gradients (1 = deterministic path)"),
];

pub fn parse_channels(v: &str) -> Result<Vec<usize>> {
    Ok(match v {
        "stock" => STOCK_CHANNELS.to_vec(),
        "desk" => DESK_CHANNELS.to_vec(),
        "tiny" => TINY_CHANNELS.to_vec(),
        _ => kv::parse_list("channels", v)?,
    })
}

pub fn parse_layer_loss(v: &str) -> Result<Vec<f64>> {
    Ok(match v {
        "prediction" => PREDICTION_ONLY_LOSS.to_vec(),
        "all" => ALL_LAYER_LOSS.to_vec(),
        _ => kv::parse_list("layer_loss", v)?,
    })
}

impl TrainConfig {
    pub fn tiny() -> Self {
        TrainConfig {
            channels: TINY_CHANNELS.to_vec(),
            ..Default::default()
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            channels: self.channels.clone(),
            height: N_MELS,
            width: self.frame_width,
            layer_loss: self.layer_loss.clone(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("frame_hop", self.frame_hop),
            ("frame_width", self.frame_width),
            ("batch_size", self.batch_size),
            ("workers", self.workers),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("`{k}` must be positive")));
            }
        }
        if self.sequence_length < 2 {
            return Err(Error::Config("`sequence_length` must be at least 2".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("`learning_rate` must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("`val_fraction` must be in [0, 1)".into()));
        }
        self.model_config().validate()
    }

    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "frame_hop" => self.frame_hop = kv::parse_value(key, value)?,
            "frame_width" => self.frame_width = kv::parse_value(key, value)?,
            "sequence_length" => self.sequence_length = kv::parse_value(key, value)?,
            "sequences_per_clip" => self.sequences_per_clip = kv::parse_value(key, value)?,
            "batch_size" => self.batch_size = kv::parse_value(key, value)?,
            "epochs" => self.epochs = kv::parse_value(key, value)?,
            "learning_rate" => self.learning_rate = kv::parse_value(key, value)?,
            "seed" => self.seed = kv::parse_value(key, value)?,
            "channels" => self.channels = parse_channels(value)?,
            "layer_loss" => self.layer_loss = parse_layer_loss(value)?,
            "patience" => self.patience = kv::parse_value(key, value)?,
            "val_fraction" => self.val_fraction = kv::parse_value(key, value)?,
            "workers" => self.workers = kv::parse_value(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn from_kv(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (k, v) in map {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(&kv::parse(text)?)
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let pairs = [
            ("frame_hop", self.frame_hop.to_string()),
            ("frame_width", self.frame_width.to_string()),
            ("sequence_length", self.sequence_length.to_string()),
            ("sequences_per_clip", self.sequences_per_clip.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("seed", self.seed.to_string()),
            ("channels", kv::join(&self.channels)),
            ("layer_loss", kv::join(&self.layer_loss)),
            ("patience", self.patience.to_string()),
            ("val_fraction", self.val_fraction.to_string()),
            ("workers", self.workers.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when there are no validation sequences.
    pub val_loss: Option<f64>,
    pub wall_seconds: f64,
}

pub fn write_loss_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "train_loss", "val_loss", "wall_seconds"])?;
    for e in log {
        w.write_record([
            e.epoch.to_string(),
            e.train_loss.to_string(),
            e.val_loss.map(|v| v.to_string()).unwrap_or_default(),
            format!("{:.3}", e.wall_seconds),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    crate::atomic_write(path, &bytes)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub best: Checkpoint,
    pub best_epoch: Option<usize>,
    pub log: Vec<EpochLog>,
    pub stopped_early: bool,
    /// Sequences that contributed gradients, per clip id.
    pub gradient_contributions: BTreeMap<String, usize>,
}

struct ClipFrames {
    id: String,
    frames: Vec<Vec<f32>>,
}

impl ClipFrames {
    fn starts(&self, len: usize) -> Vec<usize> {
        if self.frames.len() < len {
            return Vec::new();
        }
        (0..=self.frames.len() - len).step_by(len).collect()
    }

    fn sequence(&self, start: usize, len: usize) -> Vec<&[f32]> {
        self.frames[start..start + len].iter().map(Vec::as_slice).collect()
    }
}

fn clip_frames(specs: &[MelSpectrogram], cfg: &TrainConfig) -> Result<Vec<ClipFrames>> {
    let mut out = Vec::new();
    for s in specs {
        if s.rows != N_MELS {
            return Err(Error::ShapeMismatch(format!(
                "clip `{}` has {} mel rows, expected {N_MELS}",
                s.clip_id, s.rows
            )));
        }
        if s.pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("clip `{}` has non-finite pixels", s.clip_id)));
        }
        let fr = match extract_frames_width(s, cfg.frame_width, cfg.frame_hop) {
            Ok(fr) if fr.len() >= cfg.sequence_length => fr,
            Ok(_) | Err(Error::SpectrogramTooNarrow { .. }) => {
                log::warn!("clip `{}` is shorter than one sequence; skipped", s.clip_id);
                continue;
            }
            Err(e) => return Err(e),
        };
        out.push(ClipFrames {
            id: s.clip_id.clone(),
            frames: fr.frames,
        });
    }
    Ok(out)
}

/// Evenly spaced sequence starts: a fixed validation set.
fn val_sequences(clips: &[ClipFrames], cfg: &TrainConfig) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (ci, c) in clips.iter().enumerate() {
        let starts = c.starts(cfg.sequence_length);
        let n = if cfg.sequences_per_clip == 0 {
            starts.len()
        } else {
            cfg.sequences_per_clip.min(starts.len())
        };
        for k in 0..n {
            out.push((ci, starts[k * starts.len() / n]));
        }
    }
    out
}

fn epoch_sequences(clips: &[ClipFrames], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (ci, c) in clips.iter().enumerate() {
        if cfg.sequences_per_clip == 0 {
            out.extend(c.starts(cfg.sequence_length).into_iter().map(|s| (ci, s)));
        } else {
            let max_start = c.frames.len() - cfg.sequence_length;
            for _ in 0..cfg.sequences_per_clip {
                out.push((ci, rng.random_range(0..=max_start)));
            }
        }
    }
    out.shuffle(rng);
    out
}

/// Mean loss over sequences, computed without a gradient tape.
fn mean_loss(model: &PredNetModel<f32>, clips: &[ClipFrames], seqs: &[(usize, usize)], len: usize) -> Result<f64> {
    let losses: Vec<f64> = seqs
        .par_iter()
        .map(|&(ci, s)| Ok(model.forward_sequence(&clips[ci].sequence(s, len))?.loss))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Train on `train` spectrograms, selecting parameters by loss on `val`.
pub fn train(train_specs: &[MelSpectrogram], val_specs: &[MelSpectrogram], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| train_inner(train_specs, val_specs, cfg))
}

fn checkpoint(model: &PredNetModel<f32>, opt: &Adam<f32>, cfg: &TrainConfig) -> Checkpoint {
    Checkpoint {
        model: model.clone(),
        optimizer: Some(opt.clone()),
        meta: cfg.to_kv().into_iter().map(|(k, v)| (format!("train.{k}"), v)).collect(),
    }
}

fn train_inner(train_specs: &[MelSpectrogram], val_specs: &[MelSpectrogram], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut model = PredNetModel::<f32>::init(cfg.model_config(), cfg.seed)?;
    let mut opt = Adam::new(
        AdamConfig {
            lr: cfg.learning_rate,
            ..Default::default()
        },
        model.named_params().into_iter().map(|(_, t)| t),
    );
    let mut outcome = TrainOutcome {
        best: checkpoint(&model, &opt, cfg),
        best_epoch: None,
        log: Vec::new(),
        stopped_early: false,
        gradient_contributions: BTreeMap::new(),
    };
    if cfg.epochs == 0 {
        return Ok(outcome);
    }
    let train_clips = clip_frames(train_specs, cfg)?;
    if train_clips.is_empty() {
        return Err(Error::InvalidInput("no training clip is long enough for one sequence".into()));
    }
    let val_clips = clip_frames(val_specs, cfg)?;
    let val_seqs = val_sequences(&val_clips, cfg);
    for c in train_clips.iter().chain(&val_clips) {
        outcome.gradient_contributions.entry(c.id.clone()).or_insert(0);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7f4a_7c15_9e37_79b9);
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let len = cfg.sequence_length;
    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        let seqs = epoch_sequences(&train_clips, cfg, &mut rng);
        let mut loss_sum = 0.0;
        for batch in seqs.chunks(cfg.batch_size) {
            let results: Vec<_> = batch
                .par_iter()
                .map(|&(ci, s)| model.sequence_gradients(&train_clips[ci].sequence(s, len)))
                .collect::<Result<_>>()?;
            // fixed-order reduction keeps the sum independent of thread count
            let mut grads: Vec<Tensor<f32>> = model
                .named_params()
                .iter()
                .map(|(_, t)| Tensor::zeros(t.shape()))
                .collect();
            for (r, &(ci, _)) in results.iter().zip(batch) {
                if !r.loss.is_finite() {
                    return Err(Error::Divergence { epoch, loss: r.loss });
                }
                loss_sum += r.loss;
                for (acc, g) in grads.iter_mut().zip(&r.grads) {
                    acc.add_assign(g);
                }
                *outcome.gradient_contributions.get_mut(&train_clips[ci].id).unwrap() += 1;
            }
            let scale = 1.0 / batch.len() as f32;
            for g in &mut grads {
                g.scale_inplace(scale);
                if !g.all_finite() {
                    return Err(Error::Divergence { epoch, loss: f64::NAN });
                }
            }
            opt.update(model.params_mut(), &grads)?;
        }
        let train_loss = loss_sum / seqs.len() as f64;
        let val_loss = if val_seqs.is_empty() {
            None
        } else {
            Some(mean_loss(&model, &val_clips, &val_seqs, len)?)
        };
        let score = val_loss.unwrap_or(train_loss);
        if !score.is_finite() || !train_loss.is_finite() {
            return Err(Error::Divergence { epoch, loss: score });
        }
        let entry = EpochLog {
            epoch,
            train_loss,
            val_loss,
            wall_seconds: t0.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {train_loss:.6} val {} ({:.1}s)",
            val_loss.map_or("-".into(), |v| format!("{v:.6}")),
            entry.wall_seconds
        );
        outcome.log.push(entry);
        if score < best {
            best = score;
            since_best = 0;
            outcome.best = checkpoint(&model, &opt, cfg);
            outcome.best_epoch = Some(epoch);
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                log::info!("no improvement for {since_best} epochs; stopping");
                outcome.stopped_early = true;
                break;
            }
        }
    }
    Ok(outcome)
}

/// Mean per-step pixel MSE of a predictor over every frame of the given clips.
pub fn mean_step_mse(predictor: &impl crate::analysis::Predictor, specs: &[MelSpectrogram], hop: usize) -> Result<f64> {
    let evals = crate::analysis::evaluate_set(predictor, specs, hop)?;
    let (sum, n) = evals
        .iter()
        .flat_map(|e| &e.step_mse)
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        return Err(Error::InvalidInput("no frames to score".into()));
    }
    Ok(sum / n as f64)
}
