//! Random-pitch test melodies, additive synthesis, transition metadata and
//! human rating import. Also the synthetic tonal training corpus.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{mel_band_of_frequency, AudioClip, DspConfig, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const NOTES_PER_SEQUENCE: usize = 10;
pub const DEFAULT_NOTE_DURATION: f64 = 0.297;
pub const DEFAULT_TIMBRE: [f64; 3] = [1.0, 0.5, 0.25];
pub const CROSSFADE_SECS: f64 = 0.010;
pub const PEAK_LEVEL: f64 = 0.9;
/// C4..C6 in MIDI note numbers.
pub const DEFAULT_RANGE: (u8, u8) = (60, 84);

const NOTE_NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

pub fn midi_to_hz(note: u8) -> f64 {
    440.0 * 2f64.powf((note as f64 - 69.0) / 12.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Major,
    Minor,
}

/// A diatonic key: tonic pitch class plus mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Key {
    pub tonic: u8,
    pub mode: Mode,
}

impl Key {
    pub const C_MAJOR: Key = Key {
        tonic: 0,
        mode: Mode::Major,
    };

    pub fn pitch_classes(&self) -> [u8; 7] {
        let steps: [u8; 7] = match self.mode {
            Mode::Major => [0, 2, 4, 5, 7, 9, 11],
            Mode::Minor => [0, 2, 3, 5, 7, 8, 10],
        };
        steps.map(|s| (self.tonic + s) % 12)
    }

    pub fn contains(&self, note: u8) -> bool {
        self.pitch_classes().contains(&(note % 12))
    }

    /// In-key MIDI notes within `low..=high`.
    pub fn notes_in_range(&self, low: u8, high: u8) -> Vec<u8> {
        (low..=high).filter(|&n| self.contains(n)).collect()
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.mode {
            Mode::Major => "major",
            Mode::Minor => "minor",
        };
        write!(f, "{} {mode}", NOTE_NAMES[self.tonic as usize])
    }
}

impl FromStr for Key {
    type Err = Error;

    /// Accepts e.g. `C major`, `F# minor`, `Bb-major`, `a:minor`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("cannot parse key `{s}`"));
        let mut parts = s.trim().split(|c: char| c.is_whitespace() || c == '-' || c == ':').filter(|p| !p.is_empty());
        let tonic = parts.next().ok_or_else(bad)?;
        let mode = match parts.next().map(|m| m.to_ascii_lowercase()).as_deref() {
            None | Some("major") | Some("maj") => Mode::Major,
            Some("minor") | Some("min") => Mode::Minor,
            _ => return Err(bad()),
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        let mut chars = tonic.chars();
        let letter = chars.next().ok_or_else(bad)?.to_ascii_uppercase();
        let base: i32 = match letter {
            'C' => 0,
            'D' => 2,
            'E' => 4,
            'F' => 5,
            'G' => 7,
            'A' => 9,
            'B' => 11,
            _ => return Err(bad()),
        };
        let accidental: i32 = match chars.as_str() {
            "" => 0,
            "#" => 1,
            "b" => -1,
            _ => return Err(bad()),
        };
        Ok(Key {
            tonic: (base + accidental).rem_euclid(12) as u8,
            mode,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Note {
    pub number: u8,
    pub freq: f64,
}

impl Note {
    pub fn midi(number: u8) -> Self {
        Note {
            number,
            freq: midi_to_hz(number),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PitchSequence {
    pub id: String,
    pub notes: Vec<Note>,
    pub note_duration: f64,
    pub key: Key,
    pub seed: u64,
}

impl PitchSequence {
    /// Mean absolute step size in semitones.
    pub fn mean_interval_semitones(&self) -> f64 {
        let n = self.notes.len().saturating_sub(1);
        if n == 0 {
            return 0.0;
        }
        self.notes
            .windows(2)
            .map(|w| (w[1].number as f64 - w[0].number as f64).abs())
            .sum::<f64>()
            / n as f64
    }

    /// Sample index at which note `j` starts.
    pub fn onset_sample(&self, j: usize, sample_rate: u32) -> usize {
        (j as f64 * self.note_duration * sample_rate as f64).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rating {
    pub mean_rating: f64,
    /// 1..=N, N = most musical.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StimulusSet {
    pub sequences: Vec<PitchSequence>,
    pub ratings: Option<BTreeMap<String, Rating>>,
}

impl StimulusSet {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&PitchSequence> {
        self.sequences.iter().find(|s| s.id == id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOptions {
    pub n: usize,
    pub key: Key,
    pub range: (u8, u8),
    pub note_duration: f64,
    pub seed: u64,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            n: 50,
            key: Key::C_MAJOR,
            range: DEFAULT_RANGE,
            note_duration: DEFAULT_NOTE_DURATION,
            seed: 0,
        }
    }
}

fn derive_seed(base: u64, index: u64) -> u64 {
    // splitmix64 step
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Ten i.i.d. uniform in-key pitches per sequence, fixed duration.
pub fn generate_set(opts: &GenerateOptions) -> Result<StimulusSet> {
    let pool = opts.key.notes_in_range(opts.range.0, opts.range.1);
    if opts.range.0 > opts.range.1 || pool.len() < 8 {
        return Err(Error::InvalidInput(format!(
            "pitch range {}..={} holds {} in-key pitches, need at least 8",
            opts.range.0,
            opts.range.1,
            pool.len()
        )));
    }
    if !(opts.note_duration > 0.0) {
        return Err(Error::InvalidInput("note duration must be positive".into()));
    }
    let width = opts.n.max(1).to_string().len().max(2);
    let sequences = (0..opts.n)
        .map(|i| {
            let seed = derive_seed(opts.seed, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let notes = (0..NOTES_PER_SEQUENCE)
                .map(|_| Note::midi(*pool.choose(&mut rng).unwrap()))
                .collect();
            PitchSequence {
                id: format!("stim{:0width$}", i + 1),
                notes,
                note_duration: opts.note_duration,
                key: opts.key,
                seed,
            }
        })
        .collect();
    Ok(StimulusSet {
        sequences,
        ratings: None,
    })
}

/// Render notes given as `(fundamental Hz, start sample, end sample)` with
/// linear cross-fades of `fade` samples centred on interior boundaries.
fn render(notes: &[(f64, usize, usize)], total: usize, timbre: &[f64], fade: usize, sample_rate: u32) -> Vec<f64> {
    let mut out = vec![0.0; total];
    let half = fade / 2;
    for (j, &(f0, start, end)) in notes.iter().enumerate() {
        let lo = if j == 0 { 0 } else { start.saturating_sub(half) };
        let hi = if j + 1 == notes.len() { total } else { (end + fade - half).min(total) };
        for (n, o) in out.iter_mut().enumerate().take(hi).skip(lo) {
            let mut gain = 1.0;
            if j > 0 && n < lo + fade {
                gain *= (n - lo) as f64 / fade as f64;
            }
            if j + 1 < notes.len() && n + fade >= hi {
                gain *= (hi - n) as f64 / fade as f64;
            }
            let t = (n as f64 - start as f64) / sample_rate as f64;
            let s: f64 = timbre
                .iter()
                .enumerate()
                .map(|(h, a)| a * (2.0 * PI * f0 * (h + 1) as f64 * t).sin())
                .sum();
            *o += gain.clamp(0.0, 1.0) * s;
        }
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        for v in &mut out {
            *v *= PEAK_LEVEL / peak;
        }
    }
    out
}

fn check_aliasing(f0: f64, timbre: &[f64], sample_rate: u32) -> Result<()> {
    let nyquist = sample_rate as f64 / 2.0;
    let partial = timbre.len();
    if partial > 0 && f0 * partial as f64 >= nyquist {
        return Err(Error::Aliasing {
            fundamental: f0,
            partial,
            freq: f0 * partial as f64,
            nyquist,
        });
    }
    Ok(())
}

/// Additive synthesis of a sequence: harmonic partials with fixed
/// amplitudes, 10 ms cross-fades between notes, peak-normalised to 0.9.
pub fn synthesize(seq: &PitchSequence, timbre: &[f64]) -> Result<AudioClip> {
    if seq.notes.is_empty() {
        return Err(Error::InvalidInput(format!("sequence {} has no notes", seq.id)));
    }
    if timbre.is_empty() {
        return Err(Error::InvalidInput("timbre needs at least one partial".into()));
    }
    let sr = SAMPLE_RATE;
    for n in &seq.notes {
        check_aliasing(n.freq, timbre, sr)?;
    }
    let total = seq.onset_sample(seq.notes.len(), sr);
    let spans: Vec<_> = seq
        .notes
        .iter()
        .enumerate()
        .map(|(j, n)| (n.freq, seq.onset_sample(j, sr), seq.onset_sample(j + 1, sr)))
        .collect();
    let fade = (CROSSFADE_SECS * sr as f64).round() as usize;
    let samples = render(&spans, total, timbre, fade, sr);
    AudioClip::new(samples.into_iter().map(|v| v as f32).collect(), sr)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub sequence_id: String,
    /// 1-based: transition `k` goes from note `k` to note `k + 1`.
    pub index: usize,
    pub onset_time: f64,
    pub onset_column: usize,
    pub interval_bands: usize,
    pub interval_semitones: i32,
}

/// Note-change metadata derived from the symbolic sequence.
pub fn transitions(seq: &PitchSequence, cfg: &DspConfig) -> Result<Vec<Transition>> {
    let mut out = Vec::with_capacity(seq.notes.len().saturating_sub(1));
    for (k, w) in seq.notes.windows(2).enumerate() {
        let onset_sample = seq.onset_sample(k + 1, cfg.sample_rate);
        let onset_time = onset_sample as f64 / cfg.sample_rate as f64;
        let b0 = mel_band_of_frequency(w[0].freq, cfg)?;
        let b1 = mel_band_of_frequency(w[1].freq, cfg)?;
        out.push(Transition {
            sequence_id: seq.id.clone(),
            index: k + 1,
            onset_time,
            onset_column: (onset_time / cfg.column_duration()).round() as usize,
            interval_bands: b0.abs_diff(b1),
            interval_semitones: w[1].number as i32 - w[0].number as i32,
        });
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct RatingRow {
    stimulus_id: String,
    mean_rating: f64,
    rank: usize,
}

/// Attach ratings from a `stimulus_id,mean_rating,rank` CSV.
pub fn load_ratings(path: &Path, set: &StimulusSet) -> Result<StimulusSet> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<RatingRow>, _>>()?;
    attach_ratings(set, rows.into_iter().map(|r| (r.stimulus_id, r.mean_rating, r.rank)))
}

pub fn attach_ratings(set: &StimulusSet, rows: impl IntoIterator<Item = (String, f64, usize)>) -> Result<StimulusSet> {
    let mut ratings = BTreeMap::new();
    let mut by_rank: HashMap<usize, String> = HashMap::new();
    for (id, mean_rating, rank) in rows {
        if set.get(&id).is_none() {
            return Err(Error::Ratings(format!("unknown stimulus id `{id}`")));
        }
        if !(1.0..=5.0).contains(&mean_rating) {
            return Err(Error::Ratings(format!(
                "`{id}` has mean rating {mean_rating}, outside [1, 5]"
            )));
        }
        if let Some(other) = by_rank.get(&rank) {
            return Err(Error::Ratings(format!(
                "rank {rank} assigned to both `{other}` and `{id}`"
            )));
        }
        if ratings.contains_key(&id) {
            return Err(Error::Ratings(format!("duplicate stimulus id `{id}`")));
        }
        by_rank.insert(rank, id.clone());
        ratings.insert(id, Rating { mean_rating, rank });
    }
    let n = ratings.len();
    if let Some((id, r)) = ratings.iter().find(|(_, r)| r.rank == 0 || r.rank > n) {
        return Err(Error::Ratings(format!(
            "rank {} of `{id}` outside 1..={n}",
            r.rank
        )));
    }
    Ok(StimulusSet {
        sequences: set.sequences.clone(),
        ratings: Some(ratings),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    stimulus_id: String,
    seed: u64,
    key: String,
    notes: String,
    note_duration: f64,
}

/// Write the `stimulus_id,seed,key,notes,note_duration` manifest.
pub fn write_stimulus_manifest(path: &Path, set: &StimulusSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in &set.sequences {
        w.serialize(ManifestRow {
            stimulus_id: s.id.clone(),
            seed: s.seed,
            key: s.key.to_string(),
            notes: s
                .notes
                .iter()
                .map(|n| n.number.to_string())
                .collect::<Vec<_>>()
                .join(";"),
            note_duration: s.note_duration,
        })?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    crate::atomic_write(path, &bytes)
}

pub fn read_stimulus_manifest(path: &Path) -> Result<StimulusSet> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let mut sequences = Vec::new();
    for row in rdr.deserialize() {
        let row: ManifestRow = row?;
        let notes = row
            .notes
            .split(';')
            .map(|n| {
                n.trim()
                    .parse::<u8>()
                    .map(Note::midi)
                    .map_err(|_| Error::InvalidInput(format!("bad note `{n}` in {}", row.stimulus_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        sequences.push(PitchSequence {
            id: row.stimulus_id,
            notes,
            note_duration: row.note_duration,
            key: row.key.parse()?,
            seed: row.seed,
        });
    }
    Ok(StimulusSet {
        sequences,
        ratings: None,
    })
}

/// Ranking by mean interval size: smallest mean interval gets rank N
/// (most "musical"); ties broken by id.
pub fn proxy_ranking(set: &StimulusSet) -> BTreeMap<String, usize> {
    let mut order: Vec<(f64, &str)> = set
        .sequences
        .iter()
        .map(|s| (s.mean_interval_semitones(), s.id.as_str()))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(a.1)));
    order
        .into_iter()
        .enumerate()
        .map(|(i, (_, id))| (id.to_string(), i + 1))
        .collect()
}

/// Kind of synthetic training clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusKind {
    /// Melodies with mixed note lengths and mostly stepwise motion.
    Melody,
    /// A few long sustained notes.
    Steady,
}

impl CorpusKind {
    pub fn label(self) -> &'static str {
        match self {
            CorpusKind::Melody => "melody",
            CorpusKind::Steady => "steady",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusClip {
    pub id: String,
    pub kind: CorpusKind,
    pub clip: AudioClip,
}

/// Samples per synthetic corpus clip (2^17, about 2.97 s).
pub const CORPUS_CLIP_SAMPLES: usize = 131_072;

/// One synthetic clip of the given kind.
pub fn synth_corpus_clip(kind: CorpusKind, seed: u64) -> Result<AudioClip> {
    let sr = SAMPLE_RATE;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_partials = rng.random_range(1..=4usize);
    let rolloff = rng.random_range(0.35f64..0.8);
    let timbre: Vec<f64> = (0..n_partials).map(|h| rolloff.powi(h as i32)).collect();
    let key = Key {
        tonic: rng.random_range(0..12),
        mode: if rng.random_bool(0.5) { Mode::Major } else { Mode::Minor },
    };
    let pool = key.notes_in_range(48, 84);
    let (min_dur, max_dur) = match kind {
        CorpusKind::Melody => (0.12, 0.6),
        CorpusKind::Steady => (0.6, 1.2),
    };
    let mut spans = Vec::new();
    let mut start = 0usize;
    let mut idx = rng.random_range(0..pool.len());
    while start < CORPUS_CLIP_SAMPLES {
        let dur = (rng.random_range(min_dur..max_dur) * sr as f64) as usize;
        let end = (start + dur).min(CORPUS_CLIP_SAMPLES);
        spans.push((midi_to_hz(pool[idx]), start, end));
        start = end;
        let step: i64 = if rng.random_bool(0.8) {
            rng.random_range(-2..=2)
        } else {
            rng.random_range(-7..=7)
        };
        idx = (idx as i64 + step).clamp(0, pool.len() as i64 - 1) as usize;
    }
    for &(f0, _, _) in &spans {
        check_aliasing(f0, &timbre, sr)?;
    }
    let fade = (CROSSFADE_SECS * sr as f64).round() as usize;
    let samples = render(&spans, CORPUS_CLIP_SAMPLES, &timbre, fade, sr);
    AudioClip::new(samples.into_iter().map(|v| v as f32).collect(), sr)
}

/// A deterministic synthetic tonal corpus; every `steady_every`-th clip
/// (when non-zero) is a sustained-tone clip.
pub fn generate_corpus(n: usize, seed: u64, steady_every: usize) -> Result<Vec<CorpusClip>> {
    (0..n)
        .map(|i| {
            let kind = if steady_every > 0 && i % steady_every == steady_every - 1 {
                CorpusKind::Steady
            } else {
                CorpusKind::Melody
            };
            let clip = synth_corpus_clip(kind, derive_seed(seed ^ 0xC0FF_EE00, i as u64))?;
            Ok(CorpusClip {
                id: format!("{}{:04}", kind.label(), i),
                kind,
                clip,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::mel_spectrogram;

    #[test]
    fn key_parsing_and_display() {
        let k: Key = "C major".parse().unwrap();
        assert_eq!(k, Key::C_MAJOR);
        assert_eq!(k.to_string(), "C major");
        let k: Key = "f#-minor".parse().unwrap();
        assert_eq!((k.tonic, k.mode), (6, Mode::Minor));
        assert_eq!("Bb".parse::<Key>().unwrap().tonic, 10);
        assert!("H major".parse::<Key>().is_err());
        assert!("C lydian".parse::<Key>().is_err());
    }

    #[test]
    fn default_set_shape_and_key() {
        for seed in 0..5 {
            let set = generate_set(&GenerateOptions {
                seed,
                ..Default::default()
            })
            .unwrap();
            assert_eq!(set.len(), 50);
            for s in &set.sequences {
                assert_eq!(s.notes.len(), 10);
                assert!(s.notes.iter().all(|n| Key::C_MAJOR.contains(n.number)));
                assert!(s.notes.iter().all(|n| (60..=84).contains(&n.number)));
            }
        }
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate_set(&GenerateOptions::default()).unwrap();
        let b = generate_set(&GenerateOptions::default()).unwrap();
        let c = generate_set(&GenerateOptions {
            seed: 1,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn narrow_range_rejected() {
        let opts = GenerateOptions {
            range: (60, 70),
            ..Default::default()
        };
        assert!(generate_set(&opts).is_err());
    }

    fn seq(notes: &[u8]) -> PitchSequence {
        PitchSequence {
            id: "t".into(),
            notes: notes.iter().map(|&n| Note::midi(n)).collect(),
            note_duration: DEFAULT_NOTE_DURATION,
            key: Key::C_MAJOR,
            seed: 0,
        }
    }

    #[test]
    fn synthesized_duration_and_peak() {
        let s = seq(&[60, 62, 64, 65, 67, 69, 71, 72, 74, 76]);
        let clip = synthesize(&s, &DEFAULT_TIMBRE).unwrap();
        let want = 10.0 * DEFAULT_NOTE_DURATION * 44100.0;
        assert!((clip.samples.len() as f64 - want).abs() <= 512.0);
        let peak = clip.samples.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!((peak - 0.9).abs() < 1e-6);
    }

    #[test]
    fn empty_sequence_and_aliasing_rejected() {
        assert!(synthesize(&seq(&[]), &DEFAULT_TIMBRE).is_err());
        let high = seq(&[120]);
        let timbre = vec![1.0; 10];
        assert!(matches!(synthesize(&high, &timbre), Err(Error::Aliasing { .. })));
    }

    #[test]
    fn single_partial_note_peaks_in_its_band() {
        let cfg = DspConfig::default();
        let s = seq(&[69]);
        let clip = synthesize(&s, &[1.0]).unwrap();
        let spec = mel_spectrogram(&clip, &cfg, "a").unwrap();
        let band = mel_band_of_frequency(440.0, &cfg).unwrap();
        for c in 2..spec.cols - 2 {
            assert_eq!(spec.argmax_row(c), band);
        }
    }

    #[test]
    fn transition_metadata() {
        let cfg = DspConfig::default();
        let t = transitions(&seq(&[60, 62, 64, 65, 67, 69, 71, 72, 74, 76]), &cfg).unwrap();
        assert_eq!(t.len(), 9);
        assert_eq!(t[0].interval_semitones, 2);
        for tr in &t {
            let expect = (tr.onset_time / cfg.column_duration()).round() as usize;
            assert_eq!(tr.onset_column, expect);
        }
        let rep = transitions(&seq(&[64, 64]), &cfg).unwrap();
        assert_eq!(rep[0].interval_bands, 0);
        let oct = transitions(&seq(&[69, 81]), &cfg).unwrap();
        let want = mel_band_of_frequency(880.0, &cfg).unwrap() - mel_band_of_frequency(440.0, &cfg).unwrap();
        assert_eq!(oct[0].interval_bands, want);
    }

    #[test]
    fn ratings_validation() {
        let set = generate_set(&GenerateOptions {
            n: 3,
            ..Default::default()
        })
        .unwrap();
        let ids: Vec<String> = set.sequences.iter().map(|s| s.id.clone()).collect();
        let ok = attach_ratings(&set, vec![(ids[0].clone(), 2.0, 1), (ids[1].clone(), 3.0, 2), (ids[2].clone(), 4.5, 3)]).unwrap();
        assert_eq!(ok.ratings.unwrap().len(), 3);

        let dup = attach_ratings(&set, vec![(ids[0].clone(), 2.0, 1), (ids[1].clone(), 3.0, 1)]).unwrap_err();
        let msg = dup.to_string();
        assert!(msg.contains(&ids[0]) && msg.contains(&ids[1]), "{msg}");

        let range = attach_ratings(&set, vec![(ids[0].clone(), 5.2, 1)]).unwrap_err();
        assert!(range.to_string().contains("5.2"));

        assert!(attach_ratings(&set, vec![("nope".into(), 2.0, 1)]).is_err());
        assert!(attach_ratings(&set, vec![(ids[0].clone(), 2.0, 1), (ids[0].clone(), 3.0, 2)]).is_err());
        assert!(attach_ratings(&set, vec![(ids[0].clone(), 2.0, 4)]).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let set = generate_set(&GenerateOptions {
            n: 4,
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        write_stimulus_manifest(&p, &set).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("stimulus_id,seed,key,notes,note_duration\n"));
        assert_eq!(read_stimulus_manifest(&p).unwrap(), set);
    }

    #[test]
    fn proxy_ranking_orders_by_interval() {
        let mut a = seq(&[60, 62, 60, 62]);
        a.id = "smooth".into();
        let mut b = seq(&[60, 72, 60, 72]);
        b.id = "jumpy".into();
        let set = StimulusSet {
            sequences: vec![a, b],
            ratings: None,
        };
        let r = proxy_ranking(&set);
        assert_eq!(r["smooth"], 2);
        assert_eq!(r["jumpy"], 1);
    }

    #[test]
    fn corpus_is_deterministic() {
        let a = generate_corpus(3, 5, 2).unwrap();
        let b = generate_corpus(3, 5, 2).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a[1].kind, CorpusKind::Steady);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.clip, y.clip);
            assert_eq!(x.clip.samples.len(), CORPUS_CLIP_SAMPLES);
        }
    }
}
