//! Run configuration: defaults, then a `key = value` file, then
//! `AUDIOPRED_*` environment variables, then command-line flags.

use std::collections::BTreeMap;
use std::path::Path;

use audiopred::analysis::{AnalysisOptions, Regressor};
use audiopred::dsp::DspConfig;
use audiopred::kv;
use audiopred::stimuli::{Key, DEFAULT_NOTE_DURATION, DEFAULT_RANGE, DEFAULT_TIMBRE};
use audiopred::training::{TrainConfig, TRAIN_KEYS};
use audiopred::{Error, Result};

pub const ENV_PREFIX: &str = "AUDIOPRED_";

#[derive(Debug, Clone, PartialEq)]
pub struct StimuliOptions {
    pub n: usize,
    pub key: Key,
    pub low: u8,
    pub high: u8,
    pub note_duration: f64,
    pub timbre: Vec<f64>,
}

impl Default for StimuliOptions {
    fn default() -> Self {
        StimuliOptions {
            n: 50,
            key: Key::C_MAJOR,
            low: DEFAULT_RANGE.0,
            high: DEFAULT_RANGE.1,
            note_duration: DEFAULT_NOTE_DURATION,
            timbre: DEFAULT_TIMBRE.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub dsp: DspConfig,
    pub train: TrainConfig,
    pub stimuli: StimuliOptions,
    pub corpus_n: usize,
    pub corpus_steady_every: usize,
    pub analysis: AnalysisOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            workers: 1,
            dsp: DspConfig::default(),
            train: TrainConfig::default(),
            stimuli: StimuliOptions::default(),
            corpus_n: 200,
            corpus_steady_every: 5,
            analysis: AnalysisOptions::default(),
        }
    }
}

const OTHER_KEYS: &[(&str, &str)] = &[
    ("seed", "seed for stimuli, corpus, manifest split and training"),
    ("workers", "worker threads (1 = deterministic single-worker path)"),
    ("dsp.fft_size", "STFT size in samples"),
    ("dsp.hop", "STFT hop in samples (one spectrogram column)"),
    ("dsp.n_mels", "mel bands (the model expects 128)"),
    ("dsp.f_min", "lowest filterbank edge, Hz"),
    ("dsp.f_max", "highest filterbank edge, Hz"),
    ("dsp.floor_db", "dB floor mapped to pixel 0"),
    ("stimuli.n", "number of generated sequences"),
    ("stimuli.key", "key of generated sequences, e.g. `C major`"),
    ("stimuli.low", "lowest MIDI note"),
    ("stimuli.high", "highest MIDI note"),
    ("stimuli.note_duration", "seconds per note"),
    ("stimuli.timbre", "comma list of partial amplitudes"),
    ("corpus.n", "clips in a generated training corpus"),
    ("corpus.steady_every", "every n-th corpus clip holds sustained tones (0 = none)"),
    ("analysis.eval_hop", "frame hop for evaluation (time-lapse analyses need 1)"),
    ("analysis.x_max", "largest time lapse evaluated, columns"),
    ("analysis.regression_xs", "lapses reported for interval and context regressions"),
    ("analysis.context_x", "lapse written to context.csv"),
    ("analysis.group_size", "sequences per musical / non-musical group"),
    ("analysis.regressor", "rank | rating: regressor for the musicality analysis"),
];

/// Every accepted key with a one-line description.
pub fn all_keys() -> Vec<(String, &'static str)> {
    let mut keys: Vec<(String, &str)> = OTHER_KEYS.iter().map(|(k, d)| (k.to_string(), *d)).collect();
    keys.extend(TRAIN_KEYS.iter().map(|(k, d)| (format!("train.{k}"), *d)));
    keys
}

pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.to_ascii_uppercase().replace('.', "_"))
}

pub fn keys_help() -> String {
    let mut s = String::from("Config keys (file `key = value`, or env ");
    s.push_str(ENV_PREFIX);
    s.push_str("<KEY> with dots as underscores):\n");
    for (k, d) in all_keys() {
        s.push_str(&format!("  {k:<26} {d}\n"));
    }
    s
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        if let Some(tk) = key.strip_prefix("train.") {
            return self.train.set(tk, v);
        }
        match key {
            "seed" => {
                self.seed = kv::parse_value(key, v)?;
                self.train.seed = self.seed;
            }
            "workers" => {
                self.workers = kv::parse_value(key, v)?;
                self.train.workers = self.workers;
            }
            "dsp.fft_size" => self.dsp.fft_size = kv::parse_value(key, v)?,
            "dsp.hop" => self.dsp.hop = kv::parse_value(key, v)?,
            "dsp.n_mels" => self.dsp.n_mels = kv::parse_value(key, v)?,
            "dsp.f_min" => self.dsp.f_min = kv::parse_value(key, v)?,
            "dsp.f_max" => self.dsp.f_max = kv::parse_value(key, v)?,
            "dsp.floor_db" => self.dsp.floor_db = kv::parse_value(key, v)?,
            "stimuli.n" => self.stimuli.n = kv::parse_value(key, v)?,
            "stimuli.key" => self.stimuli.key = v.parse()?,
            "stimuli.low" => self.stimuli.low = kv::parse_value(key, v)?,
            "stimuli.high" => self.stimuli.high = kv::parse_value(key, v)?,
            "stimuli.note_duration" => self.stimuli.note_duration = kv::parse_value(key, v)?,
            "stimuli.timbre" => self.stimuli.timbre = kv::parse_list(key, v)?,
            "corpus.n" => self.corpus_n = kv::parse_value(key, v)?,
            "corpus.steady_every" => self.corpus_steady_every = kv::parse_value(key, v)?,
            "analysis.eval_hop" => self.analysis.eval_hop = kv::parse_value(key, v)?,
            "analysis.x_max" => self.analysis.x_max = kv::parse_value(key, v)?,
            "analysis.regression_xs" => self.analysis.regression_xs = kv::parse_list(key, v)?,
            "analysis.context_x" => self.analysis.context_x = kv::parse_value(key, v)?,
            "analysis.group_size" => self.analysis.group_size = kv::parse_value(key, v)?,
            "analysis.regressor" => self.analysis.regressor = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Defaults, then `file`, then environment overrides.
    pub fn load(file: Option<&Path>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let map = kv::parse(&text)?;
            cfg.apply(&map)?;
        }
        let env: BTreeMap<String, String> = all_keys()
            .into_iter()
            .filter_map(|(k, _)| std::env::var(env_name(&k)).ok().map(|v| (k, v)))
            .collect();
        cfg.apply(&env)?;
        Ok(cfg)
    }

    /// `seed` and `workers` first so that `train.*` entries can override them.
    fn apply(&mut self, map: &BTreeMap<String, String>) -> Result<()> {
        for k in ["seed", "workers"] {
            if let Some(v) = map.get(k) {
                self.set(k, v)?;
            }
        }
        for (k, v) in map.iter().filter(|(k, _)| !matches!(k.as_str(), "seed" | "workers")) {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.dsp.validate()?;
        self.train.validate()?;
        if self.workers == 0 {
            return Err(Error::Config("`workers` must be positive".into()));
        }
        let a = &self.analysis;
        if a.eval_hop == 0 || a.x_max == 0 || a.context_x == 0 || a.regression_xs.contains(&0) {
            return Err(Error::Config("analysis hops and lapses must be positive".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m: BTreeMap<String, String> = self
            .train
            .to_kv()
            .into_iter()
            .map(|(k, v)| (format!("train.{k}"), v))
            .collect();
        let s = &self.stimuli;
        let a = &self.analysis;
        let pairs = [
            ("seed", self.seed.to_string()),
            ("workers", self.workers.to_string()),
            ("dsp.fft_size", self.dsp.fft_size.to_string()),
            ("dsp.hop", self.dsp.hop.to_string()),
            ("dsp.n_mels", self.dsp.n_mels.to_string()),
            ("dsp.f_min", self.dsp.f_min.to_string()),
            ("dsp.f_max", self.dsp.f_max.to_string()),
            ("dsp.floor_db", self.dsp.floor_db.to_string()),
            ("stimuli.n", s.n.to_string()),
            ("stimuli.key", s.key.to_string()),
            ("stimuli.low", s.low.to_string()),
            ("stimuli.high", s.high.to_string()),
            ("stimuli.note_duration", s.note_duration.to_string()),
            ("stimuli.timbre", kv::join(&s.timbre)),
            ("corpus.n", self.corpus_n.to_string()),
            ("corpus.steady_every", self.corpus_steady_every.to_string()),
            ("analysis.eval_hop", a.eval_hop.to_string()),
            ("analysis.x_max", a.x_max.to_string()),
            ("analysis.regression_xs", kv::join(&a.regression_xs)),
            ("analysis.context_x", a.context_x.to_string()),
            ("analysis.group_size", a.group_size.to_string()),
            (
                "analysis.regressor",
                match a.regressor {
                    Regressor::Rank => "rank".to_string(),
                    Regressor::MeanRating => "rating".to_string(),
                },
            ),
        ];
        m.extend(pairs.into_iter().map(|(k, v)| (k.to_string(), v)));
        m
    }

    /// Write the resolved configuration into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        audiopred::atomic_write(&dir.join("resolved_config.txt"), kv::render(&self.to_kv()).as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_round_trips() {
        let cfg = RunConfig::default();
        let kvs = cfg.to_kv();
        let documented: Vec<String> = all_keys().into_iter().map(|(k, _)| k).collect();
        assert_eq!(kvs.len(), documented.len());
        for k in &documented {
            assert!(kvs.contains_key(k), "{k} not rendered");
        }
        let mut back = RunConfig::default();
        back.apply(&kvs).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn seed_sets_training_seed_unless_overridden() {
        let mut cfg = RunConfig::default();
        cfg.apply(&kv::parse("seed = 4").unwrap()).unwrap();
        assert_eq!(cfg.train.seed, 4);
        let mut cfg = RunConfig::default();
        cfg.apply(&kv::parse("train.seed = 9\nseed = 4").unwrap()).unwrap();
        assert_eq!((cfg.seed, cfg.train.seed), (4, 9));
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(RunConfig::default().set("dsp.bogus", "1").is_err());
        assert!(RunConfig::default().set("train.bogus", "1").is_err());
    }

    #[test]
    fn env_names() {
        assert_eq!(env_name("train.epochs"), "AUDIOPRED_TRAIN_EPOCHS");
    }
}
