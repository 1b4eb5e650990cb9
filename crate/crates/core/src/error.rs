use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed WAV: {0}")]
    Wav(String),

    #[error("unsupported sample rate {found} Hz (expected {expected} Hz; resample the corpus first)")]
    UnsupportedSampleRate { found: u32, expected: u32 },

    #[error("unsupported WAV format: {0}")]
    UnsupportedFormat(String),

    #[error("clip too short: {len} samples, need at least {min}")]
    ClipTooShort { len: usize, min: usize },

    #[error("spectrogram too narrow: {cols} columns, need at least {min}")]
    SpectrogramTooNarrow { cols: usize, min: usize },

    #[error("frequency {freq} Hz outside [{min}, {max}] Hz")]
    FrequencyOutOfRange { freq: f64, min: f64, max: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("backward already called on this tape")]
    AlreadyBackpropagated,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("corrupt spectrogram cache: {0}")]
    CorruptCache(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("empty corpus: no WAV or MELS files under {0}")]
    EmptyCorpus(PathBuf),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("aliasing: partial {partial} of {fundamental:.2} Hz reaches {freq:.2} Hz, above Nyquist {nyquist} Hz")]
    Aliasing {
        fundamental: f64,
        partial: usize,
        freq: f64,
        nyquist: f64,
    },

    #[error("ratings: {0}")]
    Ratings(String),

    #[error("degenerate regression: {0}")]
    Degenerate(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the error family.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io_error",
            Error::Wav(_) | Error::UnsupportedFormat(_) => "wav_error",
            Error::UnsupportedSampleRate { .. } => "unsupported_sample_rate",
            Error::ClipTooShort { .. } => "clip_too_short",
            Error::SpectrogramTooNarrow { .. } => "spectrogram_too_narrow",
            Error::FrequencyOutOfRange { .. } => "frequency_out_of_range",
            Error::ShapeMismatch(_) | Error::TensorShape { .. } => "shape_mismatch",
            Error::AlreadyBackpropagated => "already_backpropagated",
            Error::InvalidInput(_) => "invalid_input",
            Error::Config(_) => "config_error",
            Error::CorruptCache(_) => "corrupt_cache",
            Error::CorruptCheckpoint(_) => "corrupt_checkpoint",
            Error::EmptyCorpus(_) => "empty_corpus",
            Error::Divergence { .. } => "divergence",
            Error::Aliasing { .. } => "aliasing",
            Error::Ratings(_) => "ratings_error",
            Error::Degenerate(_) => "degenerate",
            Error::Csv(_) => "csv_error",
        }
    }

    pub fn is_numeric_divergence(&self) -> bool {
        matches!(self, Error::Divergence { .. })
    }
}
