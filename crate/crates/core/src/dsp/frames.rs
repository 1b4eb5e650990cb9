use super::mel::MelSpectrogram;
use crate::error::{Error, Result};

/// Columns per model input frame (about half a second).
pub const FRAME_COLUMNS: usize = 44;

/// Fixed-width windows cut from a spectrogram at a regular hop.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub rows: usize,
    pub width: usize,
    pub hop_columns: usize,
    pub source_columns: usize,
    /// Row-major `rows × width` windows; frame `k` starts at column `k * hop_columns`.
    pub frames: Vec<Vec<f32>>,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_refs(&self) -> Vec<&[f32]> {
        self.frames.iter().map(Vec::as_slice).collect()
    }

    /// First column of frame `k` in the source spectrogram.
    pub fn start_column(&self, k: usize) -> usize {
        k * self.hop_columns
    }

    /// Columns of the source not covered by any frame.
    pub fn dropped_columns(&self) -> usize {
        match self.frames.len() {
            0 => self.source_columns,
            n => self.source_columns - (self.start_column(n - 1) + self.width),
        }
    }
}

/// Number of frames [`extract_frames`] yields for `cols` columns.
pub fn frame_count(cols: usize, width: usize, hop_columns: usize) -> usize {
    if cols < width || hop_columns == 0 {
        0
    } else {
        (cols - width) / hop_columns + 1
    }
}

pub fn extract_frames(spec: &MelSpectrogram, hop_columns: usize) -> Result<FrameSequence> {
    extract_frames_width(spec, FRAME_COLUMNS, hop_columns)
}

/// Like [`extract_frames`] with a custom window width. Trailing columns that do
/// not fill a whole window are dropped.
pub fn extract_frames_width(spec: &MelSpectrogram, width: usize, hop_columns: usize) -> Result<FrameSequence> {
    if hop_columns == 0 {
        return Err(Error::InvalidInput("frame hop must be at least 1 column".into()));
    }
    if width == 0 || spec.cols < width {
        return Err(Error::SpectrogramTooNarrow {
            cols: spec.cols,
            min: width,
        });
    }
    let n = frame_count(spec.cols, width, hop_columns);
    let frames = (0..n)
        .map(|k| {
            let c0 = k * hop_columns;
            let mut f = Vec::with_capacity(spec.rows * width);
            for r in 0..spec.rows {
                let row = &spec.pixels[r * spec.cols..(r + 1) * spec.cols];
                f.extend_from_slice(&row[c0..c0 + width]);
            }
            f
        })
        .collect();
    Ok(FrameSequence {
        rows: spec.rows,
        width,
        hop_columns,
        source_columns: spec.cols,
        frames,
    })
}
