//! Audio ingestion, quantised mel spectrograms and frame extraction.

mod audio;
mod cache;
mod frames;
mod mel;

pub use audio::{load_audio, write_wav, AudioClip, SAMPLE_RATE};
pub use cache::{
    decode_spectrogram, encode_spectrogram, load_spectrogram, save_spectrogram, MELS_MAGIC, MELS_VERSION,
};
pub use frames::{extract_frames, extract_frames_width, frame_count, FrameSequence, FRAME_COLUMNS};
pub use mel::{
    db_to_pixel, hz_to_mel, mel_band_of_frequency, mel_spectrogram, mel_to_hz, DspConfig, MelFilterbank,
    MelSpectrogram, Window, N_MELS, NOMINAL_COLUMN_MS,
};
