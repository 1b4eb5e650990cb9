//! Quantised mel spectrogram.
//!
//! Centered STFT (reflect padding of `fft_size / 2`), Hann window, power
//! spectrum, triangular HTK-scale filterbank, decibels relative to the
//! clip's loudest mel cell, clipped at `floor_db` and mapped linearly onto
//! `[0, 255]`.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::audio::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Rows of the stock spectrogram.
pub const N_MELS: usize = 128;

/// Milliseconds per column as quoted for the reference corpus (2972 ms / 257 columns).
pub const NOMINAL_COLUMN_MS: f64 = 2972.0 / 257.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Hann,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DspConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub hop: usize,
    pub window: Window,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub floor_db: f64,
}

impl Default for DspConfig {
    fn default() -> Self {
        DspConfig {
            sample_rate: SAMPLE_RATE,
            fft_size: 2048,
            hop: 512,
            window: Window::Hann,
            n_mels: N_MELS,
            f_min: 0.0,
            f_max: SAMPLE_RATE as f64 / 2.0,
            floor_db: -80.0,
        }
    }
}

impl DspConfig {
    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate as f64 / 2.0;
        if self.fft_size < 2 || self.hop == 0 || self.hop > self.fft_size {
            return Err(Error::Config(format!(
                "need 0 < hop ({}) <= fft_size ({})",
                self.hop, self.fft_size
            )));
        }
        if self.n_mels == 0 {
            return Err(Error::Config("n_mels must be positive".into()));
        }
        if self.f_max != nyquist {
            return Err(Error::Config(format!(
                "f_max ({}) must equal the Nyquist frequency ({nyquist})",
                self.f_max
            )));
        }
        if !(0.0..self.f_max).contains(&self.f_min) {
            return Err(Error::Config(format!("f_min {} out of range", self.f_min)));
        }
        if !(self.floor_db < 0.0 && self.floor_db.is_finite()) {
            return Err(Error::Config("floor_db must be negative".into()));
        }
        Ok(())
    }

    /// Seconds between spectrogram columns.
    pub fn column_duration(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }

    /// Column count produced for a clip of `len` samples.
    pub fn num_columns(&self, len: usize) -> usize {
        len / self.hop + 1
    }
}

/// HTK mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters over the non-negative FFT bins, stored sparsely.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// Lower edge, center and upper edge (Hz) of every filter.
    pub edges: Vec<(f64, f64, f64)>,
    filters: Vec<(usize, Vec<f64>)>,
    n_bins: usize,
}

impl MelFilterbank {
    pub fn new(cfg: &DspConfig) -> Self {
        let n_bins = cfg.fft_size / 2 + 1;
        let (m_lo, m_hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
        let points: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
        let mut edges = Vec::with_capacity(cfg.n_mels);
        let mut filters = Vec::with_capacity(cfg.n_mels);
        for m in 0..cfg.n_mels {
            let (lo, c, hi) = (points[m], points[m + 1], points[m + 2]);
            edges.push((lo, c, hi));
            let mut start = None;
            let mut weights = Vec::new();
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = triangle(f, lo, c, hi);
                if w > 0.0 {
                    start.get_or_insert(k);
                    weights.push(w);
                } else if start.is_some() {
                    break;
                }
            }
            filters.push((start.unwrap_or(0), weights));
        }
        MelFilterbank {
            edges,
            filters,
            n_bins,
        }
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    /// Dense weights of filter `m` over all FFT bins.
    pub fn dense(&self, m: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_bins];
        let (start, w) = &self.filters[m];
        out[*start..*start + w.len()].copy_from_slice(w);
        out
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        self.edges.iter().map(|e| e.1)
    }

    fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (o, (start, w)) in out.iter_mut().zip(&self.filters) {
            *o = w.iter().zip(&power[*start..]).map(|(a, b)| a * b).sum();
        }
    }
}

fn triangle(f: f64, lo: f64, c: f64, hi: f64) -> f64 {
    if f <= lo || f >= hi {
        0.0
    } else if f <= c {
        (f - lo) / (c - lo)
    } else {
        (hi - f) / (hi - c)
    }
}

/// Index of the filter whose center frequency is nearest to `f`.
pub fn mel_band_of_frequency(f: f64, cfg: &DspConfig) -> Result<usize> {
    if !(cfg.f_min..=cfg.f_max).contains(&f) {
        return Err(Error::FrequencyOutOfRange {
            freq: f,
            min: cfg.f_min,
            max: cfg.f_max,
        });
    }
    let bank = MelFilterbank::new(cfg);
    let mut best = (0, f64::INFINITY);
    for (m, c) in bank.centers().enumerate() {
        let d = (c - f).abs();
        if d < best.1 {
            best = (m, d);
        }
    }
    Ok(best.0)
}

/// `n_mels × T` pixel image in `[0, 255]`, row 0 = lowest band.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub clip_id: String,
    pub rows: usize,
    pub cols: usize,
    pub column_duration: f64,
    /// Row-major pixels.
    pub pixels: Vec<f32>,
}

impl MelSpectrogram {
    pub fn new(clip_id: impl Into<String>, rows: usize, cols: usize, column_duration: f64, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} spectrogram with {} pixels",
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=255.0).contains(*p)) {
            return Err(Error::InvalidInput(format!("pixel {p} outside [0,255]")));
        }
        Ok(MelSpectrogram {
            clip_id: clip_id.into(),
            rows,
            cols,
            column_duration,
            pixels,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.cols + col]
    }

    pub fn column(&self, col: usize) -> Vec<f32> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    /// Row of the largest pixel in column `col` (lowest row on ties).
    pub fn argmax_row(&self, col: usize) -> usize {
        let mut best = 0;
        for r in 1..self.rows {
            if self.get(r, col) > self.get(best, col) {
                best = r;
            }
        }
        best
    }
}

/// Map a decibel value (relative to the clip maximum) to a pixel.
pub fn db_to_pixel(db: f64, floor_db: f64) -> f64 {
    let clipped = db.clamp(floor_db, 0.0);
    (clipped - floor_db) / (0.0 - floor_db) * 255.0
}

fn reflect_index(i: isize, len: usize) -> usize {
    // single reflection suffices because padding < len
    let n = len as isize;
    let j = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    j as usize
}

pub fn mel_spectrogram(clip: &AudioClip, cfg: &DspConfig, clip_id: &str) -> Result<MelSpectrogram> {
    cfg.validate()?;
    if clip.sample_rate != cfg.sample_rate {
        return Err(Error::UnsupportedSampleRate {
            found: clip.sample_rate,
            expected: cfg.sample_rate,
        });
    }
    let len = clip.samples.len();
    if len < cfg.fft_size {
        return Err(Error::ClipTooShort {
            len,
            min: cfg.fft_size,
        });
    }
    let n = cfg.fft_size;
    let half = (n / 2) as isize;
    let cols = cfg.num_columns(len);
    let bank = MelFilterbank::new(cfg);
    let window: Vec<f64> = match cfg.window {
        // periodic Hann
        Window::Hann => (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect(),
    };
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut power = vec![0.0; n / 2 + 1];
    let mut mel = vec![0.0; cfg.n_mels * cols];
    let mut col_energy = vec![0.0; cfg.n_mels];

    for c in 0..cols {
        let origin = (c * cfg.hop) as isize - half;
        for (i, b) in buf.iter_mut().enumerate() {
            let s = clip.samples[reflect_index(origin + i as isize, len)] as f64;
            *b = Complex::new(s * window[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (p, b) in power.iter_mut().zip(&buf) {
            *p = b.norm_sqr();
        }
        bank.apply(&power, &mut col_energy);
        for (m, &e) in col_energy.iter().enumerate() {
            mel[m * cols + c] = e;
        }
    }

    let s_max = mel.iter().copied().fold(0.0, f64::max);
    let pixels = if s_max <= 0.0 {
        vec![0.0; mel.len()]
    } else {
        let eps = s_max * 1e-30;
        mel.iter()
            .map(|&s| db_to_pixel(10.0 * (s.max(eps) / s_max).log10(), cfg.floor_db) as f32)
            .collect()
    };
    MelSpectrogram::new(clip_id, cfg.n_mels, cols, cfg.column_duration(), pixels)
}
