//! `MELS` spectrogram cache files.
//!
//! Layout (little-endian): magic `MELS`, version `u16`, rows `u32`,
//! cols `u32`, column duration `f64`, then `rows * cols` `f32` pixels in
//! row-major order.

use std::path::Path;

use super::mel::MelSpectrogram;
use crate::error::{Error, Result};
use crate::io_util::{atomic_write, Reader};

pub const MELS_MAGIC: &[u8; 4] = b"MELS";
pub const MELS_VERSION: u16 = 1;

pub fn encode_spectrogram(spec: &MelSpectrogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(22 + spec.pixels.len() * 4);
    out.extend_from_slice(MELS_MAGIC);
    out.extend_from_slice(&MELS_VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.rows as u32).to_le_bytes());
    out.extend_from_slice(&(spec.cols as u32).to_le_bytes());
    out.extend_from_slice(&spec.column_duration.to_le_bytes());
    for p in &spec.pixels {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode_spectrogram(bytes: &[u8], clip_id: &str) -> Result<MelSpectrogram> {
    let corrupt = |m: &str| Error::CorruptCache(m.to_string());
    let mut r = Reader::new(bytes);
    if r.take(4).map_err(|_| corrupt("truncated magic"))? != MELS_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = r.u16().map_err(|_| corrupt("truncated header"))?;
    if version != MELS_VERSION {
        return Err(Error::CorruptCache(format!("unsupported version {version}")));
    }
    let rows = r.u32().map_err(|_| corrupt("truncated header"))? as usize;
    let cols = r.u32().map_err(|_| corrupt("truncated header"))? as usize;
    let column_duration = r.f64().map_err(|_| corrupt("truncated header"))?;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| corrupt("dimension overflow"))?;
    if r.remaining() != n * 4 {
        return Err(Error::CorruptCache(format!(
            "expected {} pixel bytes, found {}",
            n * 4,
            r.remaining()
        )));
    }
    let pixels = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
    MelSpectrogram::new(clip_id, rows, cols, column_duration, pixels)
        .map_err(|e| Error::CorruptCache(e.to_string()))
}

pub fn save_spectrogram(path: &Path, spec: &MelSpectrogram) -> Result<()> {
    atomic_write(path, &encode_spectrogram(spec))
}

/// Load a cache file; the clip id is the file stem.
pub fn load_spectrogram(path: &Path) -> Result<MelSpectrogram> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_spectrogram(&bytes, &id)
}
